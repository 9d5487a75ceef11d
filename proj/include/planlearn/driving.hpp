#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "planlearn/core.hpp"

namespace planlearn::driving {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double k) const { return {x * k, y * k}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::sqrt(x * x + y * y); }
  Vec2 rotated(double angle) const {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {c * x - s * y, s * x + c * y};
  }
};

double wrap_angle(double a);  // into (-pi, pi]

struct Polyline {
  std::vector<Vec2> pts;
  std::vector<double> cum;  // cumulative arclength, cum[0] = 0

  void finalize();
  double length() const { return cum.empty() ? 0.0 : cum.back(); }
  Vec2 point_at(double s) const;
  Vec2 tangent_at(double s) const;

  struct Projection {
    double s = 0.0;
    double lateral = 0.0;  // signed, positive to the left of travel
  };
  Projection project(Vec2 p) const;
};

enum class LaneKind { Road, Walkway };

struct Lane {
  int id = 0;
  LaneKind kind = LaneKind::Road;
  Polyline path;
  int left = -1;
  int right = -1;
  std::vector<int> successors;
};

// Lane network plus the route table agents sample intentions from. Routes
// are lane chains with precomputed concatenated paths.
class LaneGraph {
 public:
  std::vector<Lane> lanes;
  std::vector<std::vector<int>> routes;  // route id -> lane ids
  std::vector<Polyline> route_paths;
  std::vector<LaneKind> route_kinds;

  void build_routes();  // one route per lane chain (greedy successor walk)
  int route_of_lane(int lane_id) const;

  // Two crossing two-lane-per-direction roads with a pair of walkways; the
  // default desk-scale scene.
  static LaneGraph builtin_intersection();

  static LaneGraph load(const std::string& path);
  void save(const std::string& path) const;

  // Rigidly transformed copy (tests the ego-centric feature invariance).
  LaneGraph transformed(double angle, Vec2 shift) const;
};

enum class AgentKind { Car, Pedestrian };

struct AgentPhys {
  Vec2 pos;
  double speed = 0.0;
  double heading = 0.0;
  AgentKind kind = AgentKind::Car;
};

struct HiddenVar {
  bool attentive = true;
  int route = 0;
  double progress = 0.0;   // arclength along the route path
  double cruise = 0.0;     // preferred speed an attentive agent recovers to
};

struct DrivingState : State {
  AgentPhys ego;
  int ego_lane = 0;
  double ego_progress = 0.0;
  std::vector<AgentPhys> exo;
  std::vector<HiddenVar> hidden;
  bool collided = false;
  bool reached_goal = false;
  double collision_speed = 0.0;
};

// Lane-change component first, acceleration second: id = lane * 3 + accel.
enum class LaneChoice { Left = 0, Keep = 1, Right = 2 };
enum class AccelChoice { Acc = 0, Maintain = 1, Dec = 2 };

struct DrivingAction {
  LaneChoice lane = LaneChoice::Keep;
  AccelChoice accel = AccelChoice::Maintain;

  static DrivingAction decode(int id) {
    return {static_cast<LaneChoice>(id / 3), static_cast<AccelChoice>(id % 3)};
  }
  int encode() const { return static_cast<int>(lane) * 3 + static_cast<int>(accel); }
};

struct DrivingConfig {
  double gamma = 0.95;
  double dt = 1.0 / 3.0;  // 3 Hz control
  double ego_max_speed = 6.0;
  double accel = 3.0;
  double car_max_speed = 5.0;
  double ped_max_speed = 2.0;
  double noise_sigma = 0.05;      // displacement noise, truncated at 3 sigma
  double p_attentive = 0.5;
  int exo_count = 6;
  int k_nearest = 8;              // exo slots in the feature encoding
  double sense_radius = 50.0;
  double goal_progress = 90.0;
  // Observation grid
  double pos_res = 0.5;
  double speed_res = 0.25;
  double heading_res = 0.1;
};

// Footprints (length, width) and bounding radii.
Vec2 footprint(AgentKind kind);
double bounding_radius(AgentKind kind);

// First-contact time of two constant-velocity swept discs; +inf when they
// never meet, 0 when already overlapping.
double swept_disc_ttc(Vec2 p1, Vec2 v1, double r1, Vec2 p2, Vec2 v2, double r2);

// Oriented-rectangle overlap (separating axes).
bool obb_overlap(Vec2 c1, double heading1, Vec2 half1, Vec2 c2, double heading2,
                 Vec2 half2);

class DrivingModel : public DomainModel {
 public:
  DrivingModel(LaneGraph graph, DrivingConfig config);

  int action_count() const override { return 9; }
  double gamma() const override { return config_.gamma; }
  StepResult step(const State& s, int action, std::uint64_t noise) const override;
  bool is_terminal(const State& s) const override;
  int default_rollout_action(const State&) const override {
    return DrivingAction{LaneChoice::Keep, AccelChoice::Dec}.encode();
  }
  double upper_bound(const State&) const override { return 0.0; }  // rewards nonpositive
  FactoredReward mean_reward(const State& s, int action) const override;
  std::size_t feature_length() const override;
  FeatureVector encode_history(std::span<const StatePtr> frames) const override;

  const LaneGraph& graph() const { return graph_; }
  const DrivingConfig& config() const { return config_; }

  // Minimum constant-velocity time-to-collision between the ego and any
  // exo-agent. A step is a near miss when this drops below 0.33 s.
  double ttc(const DrivingState& s) const;
  bool near_miss(const DrivingState& s) const { return ttc(s) < 0.33; }

  // Shaped reward for the reinforcement learner (small, smooth, collision
  // proximity instead of collision events).
  double smooth_reward(const DrivingState& prev, int action, const DrivingState& next) const;

  // Monolithic sum of the reward terms, used to cross-check the factoring.
  double raw_reward(const DrivingState& prev, int action, const DrivingState& next) const;

 private:
  StepResult step_impl(const State& s, int action, std::uint64_t noise, double sigma) const;

  LaneGraph graph_;
  DrivingConfig config_;
};

// Route/attention assignment consistent with an agent's pose: uniform over
// routes whose path passes near the agent with compatible heading;
// Bernoulli(p_attentive) attention. Falls back to the nearest route (and
// reports it) when none is feasible.
struct HiddenSample {
  std::vector<HiddenVar> hidden;
  int infeasible = 0;  // agents with no feasible route, assigned nearest
};
HiddenSample sample_hidden(const LaneGraph& graph, const DrivingConfig& config,
                           std::span<const AgentPhys> agents, std::uint64_t noise);

class DrivingEnvironment : public Environment {
 public:
  DrivingEnvironment(LaneGraph graph, DrivingConfig config);

  const DomainModel& model() const override { return model_; }
  void reset(std::uint64_t seed) override;
  EnvStep step(int action) override;
  Belief initial_belief(int particle_count, std::uint64_t seed) const override;
  StatePtr observable_frame(const Belief& b) const override;
  Belief reanchor(Belief b) const override;

  const DrivingState& true_state() const { return *state_; }

 private:
  DrivingModel model_;
  std::shared_ptr<const DrivingState> state_;
  std::shared_ptr<const DrivingState> observed_;  // grid-quantized physical view
  std::uint64_t seed_ = 0;
  long steps_ = 0;
};

// The observation content of §-style discretized sensing: physical states
// snapped to the observation grid, hidden variables defaulted.
std::shared_ptr<const DrivingState> quantize_observation(const DrivingState& s,
                                                         const DrivingConfig& config);

}  // namespace planlearn::driving
