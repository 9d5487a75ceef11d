#include "planlearn/driving.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "planlearn/rng.hpp"

namespace planlearn::driving {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kWheelbase = 2.6;
constexpr double kMaxSteer = 0.6;
constexpr double kReactHorizon = 3.0;  // attentive agents brake below this ttc
}  // namespace

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

void Polyline::finalize() {
  cum.resize(pts.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i > 0) acc += (pts[i] - pts[i - 1]).norm();
    cum[i] = acc;
  }
}

Vec2 Polyline::point_at(double s) const {
  if (pts.size() == 1 || s <= 0.0) return pts.front();
  if (s >= length()) return pts.back();
  std::size_t i = 1;
  while (cum[i] < s) ++i;
  const double seg = cum[i] - cum[i - 1];
  const double t = seg > 0.0 ? (s - cum[i - 1]) / seg : 0.0;
  return pts[i - 1] + (pts[i] - pts[i - 1]) * t;
}

Vec2 Polyline::tangent_at(double s) const {
  if (pts.size() < 2) return {1.0, 0.0};
  std::size_t i = 1;
  while (i < cum.size() - 1 && cum[i] < s) ++i;
  Vec2 d = pts[i] - pts[i - 1];
  const double n = d.norm();
  return n > 0.0 ? d * (1.0 / n) : Vec2{1.0, 0.0};
}

Polyline::Projection Polyline::project(Vec2 p) const {
  Projection best{0.0, kInf};
  double best_d2 = kInf;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const Vec2 a = pts[i - 1];
    const Vec2 d = pts[i] - a;
    const double len2 = d.dot(d);
    double t = len2 > 0.0 ? (p - a).dot(d) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 q = a + d * t;
    const double d2 = (p - q).dot(p - q);
    if (d2 < best_d2) {
      best_d2 = d2;
      best.s = cum[i - 1] + t * std::sqrt(len2);
      const double side = d.cross(p - q);  // >0: left of segment direction
      best.lateral = (side >= 0.0 ? 1.0 : -1.0) * std::sqrt(d2);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

void LaneGraph::build_routes() {
  routes.clear();
  route_paths.clear();
  route_kinds.clear();
  for (const Lane& lane : lanes) {
    // One canonical route per lane: greedy successor walk (lowest id).
    std::vector<int> chain = {lane.id};
    std::vector<char> seen(lanes.size(), 0);
    seen[lane.id] = 1;
    int cur = lane.id;
    while (!lanes[cur].successors.empty()) {
      const int next = *std::min_element(lanes[cur].successors.begin(),
                                         lanes[cur].successors.end());
      if (next < 0 || next >= static_cast<int>(lanes.size()) || seen[next]) break;
      chain.push_back(next);
      seen[next] = 1;
      cur = next;
    }
    Polyline path;
    for (int lid : chain) {
      for (std::size_t i = 0; i < lanes[lid].path.pts.size(); ++i) {
        if (!path.pts.empty() && i == 0) continue;  // avoid duplicate joints
        path.pts.push_back(lanes[lid].path.pts[i]);
      }
    }
    path.finalize();
    routes.push_back(std::move(chain));
    route_paths.push_back(std::move(path));
    route_kinds.push_back(lane.kind);
  }
}

int LaneGraph::route_of_lane(int lane_id) const {
  for (std::size_t r = 0; r < routes.size(); ++r) {
    if (!routes[r].empty() && routes[r].front() == lane_id) return static_cast<int>(r);
  }
  return 0;
}

LaneGraph LaneGraph::builtin_intersection() {
  LaneGraph g;
  auto add_lane = [&g](double x0, double y0, double x1, double y1, LaneKind kind) {
    Lane lane;
    lane.id = static_cast<int>(g.lanes.size());
    lane.kind = kind;
    lane.path.pts = {{x0, y0}, {x1, y1}};
    lane.path.finalize();
    g.lanes.push_back(std::move(lane));
  };
  // Northbound / southbound pairs, then eastbound / westbound, then walkways.
  add_lane(1.75, -60, 1.75, 60, LaneKind::Road);    // 0
  add_lane(5.25, -60, 5.25, 60, LaneKind::Road);    // 1
  add_lane(-1.75, 60, -1.75, -60, LaneKind::Road);  // 2
  add_lane(-5.25, 60, -5.25, -60, LaneKind::Road);  // 3
  add_lane(-60, -1.75, 60, -1.75, LaneKind::Road);  // 4
  add_lane(-60, -5.25, 60, -5.25, LaneKind::Road);  // 5
  add_lane(60, 1.75, -60, 1.75, LaneKind::Road);    // 6
  add_lane(60, 5.25, -60, 5.25, LaneKind::Road);    // 7
  add_lane(-15, -10, 15, -10, LaneKind::Walkway);   // 8
  add_lane(15, 10, -15, 10, LaneKind::Walkway);     // 9
  auto pair_lr = [&g](int inner, int outer) {
    g.lanes[inner].right = outer;
    g.lanes[outer].left = inner;
  };
  pair_lr(0, 1);
  pair_lr(2, 3);
  pair_lr(4, 5);
  pair_lr(6, 7);
  g.build_routes();
  return g;
}

LaneGraph LaneGraph::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read map " + path);
  LaneGraph g;
  std::string line;
  Lane cur;
  bool in_lane = false;
  auto flush = [&]() {
    if (in_lane) {
      cur.path.finalize();
      g.lanes.push_back(cur);
      cur = Lane{};
      in_lane = false;
    }
  };
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    std::string kw;
    if (!(ss >> kw) || kw[0] == '#') continue;
    if (kw == "lane") {
      flush();
      in_lane = true;
      std::string kind;
      ss >> cur.id >> kind;
      cur.kind = kind == "walkway" ? LaneKind::Walkway : LaneKind::Road;
    } else if (kw == "left") {
      ss >> cur.left;
    } else if (kw == "right") {
      ss >> cur.right;
    } else if (kw == "succ") {
      int v;
      while (ss >> v) cur.successors.push_back(v);
    } else if (kw == "pts") {
      double x, y;
      while (ss >> x >> y) cur.path.pts.push_back({x, y});
    } else {
      throw std::runtime_error("map: unknown keyword " + kw);
    }
  }
  flush();
  for (std::size_t i = 0; i < g.lanes.size(); ++i) {
    if (g.lanes[i].id != static_cast<int>(i)) {
      throw std::runtime_error("map: lane ids must be dense and ordered");
    }
    if (g.lanes[i].path.pts.size() < 2) throw std::runtime_error("map: degenerate lane");
  }
  g.build_routes();
  return g;
}

void LaneGraph::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write map " + path);
  for (const Lane& lane : lanes) {
    os << "lane " << lane.id << " " << (lane.kind == LaneKind::Walkway ? "walkway" : "road")
       << "\n";
    if (lane.left >= 0) os << "left " << lane.left << "\n";
    if (lane.right >= 0) os << "right " << lane.right << "\n";
    if (!lane.successors.empty()) {
      os << "succ";
      for (int s : lane.successors) os << " " << s;
      os << "\n";
    }
    os << "pts";
    char buf[64];
    for (Vec2 p : lane.path.pts) {
      std::snprintf(buf, sizeof(buf), " %.17g %.17g", p.x, p.y);
      os << buf;
    }
    os << "\n";
  }
}

LaneGraph LaneGraph::transformed(double angle, Vec2 shift) const {
  LaneGraph g = *this;
  for (Lane& lane : g.lanes) {
    for (Vec2& p : lane.path.pts) p = p.rotated(angle) + shift;
    lane.path.finalize();
  }
  g.build_routes();
  return g;
}

// ---------------------------------------------------------------------------

Vec2 footprint(AgentKind kind) {
  return kind == AgentKind::Car ? Vec2{4.0, 1.8} : Vec2{0.6, 0.6};
}

double bounding_radius(AgentKind kind) {
  // Clearance radius for the swept-disc time-to-collision: covers the
  // footprint width plus a margin. The half-diagonal is far too fat here:
  // it flags parallel traffic 3.5 m apart as converging, which jams
  // attentive agents behind laterally-clear obstacles. Actual collision
  // detection uses the exact rectangles.
  const Vec2 f = footprint(kind);
  return 0.5 * f.y + (kind == AgentKind::Car ? 0.4 : 0.2);
}

double swept_disc_ttc(Vec2 p1, Vec2 v1, double r1, Vec2 p2, Vec2 v2, double r2) {
  const Vec2 p = p2 - p1;
  const Vec2 v = v2 - v1;
  const double rr = r1 + r2;
  if (p.dot(p) <= rr * rr) return 0.0;
  const double a = v.dot(v);
  if (a < 1e-12) return kInf;
  const double b = 2.0 * p.dot(v);
  const double c = p.dot(p) - rr * rr;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return kInf;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  return t >= 0.0 ? t : kInf;
}

bool obb_overlap(Vec2 c1, double heading1, Vec2 half1, Vec2 c2, double heading2,
                 Vec2 half2) {
  const Vec2 ax1 = Vec2{1, 0}.rotated(heading1);
  const Vec2 ay1 = Vec2{0, 1}.rotated(heading1);
  const Vec2 ax2 = Vec2{1, 0}.rotated(heading2);
  const Vec2 ay2 = Vec2{0, 1}.rotated(heading2);
  const Vec2 d = c2 - c1;
  const Vec2 axes[4] = {ax1, ay1, ax2, ay2};
  for (const Vec2& axis : axes) {
    const double r1 = half1.x * std::abs(axis.dot(ax1)) + half1.y * std::abs(axis.dot(ay1));
    const double r2 = half2.x * std::abs(axis.dot(ax2)) + half2.y * std::abs(axis.dot(ay2));
    if (std::abs(axis.dot(d)) > r1 + r2) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

DrivingModel::DrivingModel(LaneGraph graph, DrivingConfig config)
    : graph_(std::move(graph)), config_(config) {
  if (graph_.routes.empty()) graph_.build_routes();
}

bool DrivingModel::is_terminal(const State& s) const {
  const auto& ds = static_cast<const DrivingState&>(s);
  return ds.collided || ds.reached_goal;
}

namespace {

Vec2 velocity(const AgentPhys& a) {
  return Vec2{std::cos(a.heading), std::sin(a.heading)} * a.speed;
}

// Displacement noise: isotropic direction, half-normal radius truncated at
// 3 sigma so the per-step kinematic bound stays exact.
Vec2 displacement_noise(double sigma, std::uint64_t word) {
  if (sigma <= 0.0) return {0.0, 0.0};
  Rng rng(word);
  const double radius = std::min(std::abs(rng.next_gaussian()) * sigma, 3.0 * sigma);
  const double angle = rng.next_unit() * 2.0 * M_PI;
  return Vec2{std::cos(angle), std::sin(angle)} * radius;
}

// Pure-pursuit bicycle step toward a route path.
AgentPhys bicycle_track(const AgentPhys& agent, const Polyline& path, double new_speed,
                        double dt) {
  AgentPhys next = agent;
  next.speed = new_speed;
  const Polyline::Projection proj = path.project(agent.pos);
  const double lookahead = std::max(2.0, 0.8 * new_speed);
  const Vec2 target = path.point_at(proj.s + lookahead);
  const Vec2 to_target = target - agent.pos;
  const double eta = wrap_angle(std::atan2(to_target.y, to_target.x) - agent.heading);
  const double ld = std::max(to_target.norm(), 1e-6);
  const double steer =
      std::clamp(std::atan2(2.0 * kWheelbase * std::sin(eta), ld), -kMaxSteer, kMaxSteer);
  next.pos.x += new_speed * std::cos(agent.heading) * dt;
  next.pos.y += new_speed * std::sin(agent.heading) * dt;
  next.heading = wrap_angle(agent.heading + new_speed / kWheelbase * std::tan(steer) * dt);
  return next;
}

AgentPhys walk_track(const AgentPhys& agent, const Polyline& path, double new_speed,
                     double dt) {
  AgentPhys next = agent;
  next.speed = new_speed;
  const Polyline::Projection proj = path.project(agent.pos);
  const Vec2 target = path.point_at(proj.s + std::max(1.0, new_speed * dt * 2.0));
  Vec2 dir = target - agent.pos;
  const double n = dir.norm();
  dir = n > 1e-9 ? dir * (1.0 / n) : Vec2{std::cos(agent.heading), std::sin(agent.heading)};
  next.pos = agent.pos + dir * (new_speed * dt);
  if (new_speed > 1e-6) next.heading = std::atan2(dir.y, dir.x);
  return next;
}

double min_ttc_against(const AgentPhys& self, const DrivingState& s, int skip_exo) {
  double best = kInf;
  const Vec2 v_self = velocity(self);
  const double r_self = bounding_radius(self.kind);
  if (skip_exo != -1) {  // self is an exo-agent; consider the ego too
    best = std::min(best, swept_disc_ttc(self.pos, v_self, r_self, s.ego.pos,
                                         velocity(s.ego), bounding_radius(s.ego.kind)));
  }
  for (std::size_t j = 0; j < s.exo.size(); ++j) {
    if (static_cast<int>(j) == skip_exo) continue;
    best = std::min(best, swept_disc_ttc(self.pos, v_self, r_self, s.exo[j].pos,
                                         velocity(s.exo[j]), bounding_radius(s.exo[j].kind)));
  }
  return best;
}

}  // namespace

double DrivingModel::ttc(const DrivingState& s) const {
  return min_ttc_against(s.ego, s, -1);
}

StepResult DrivingModel::step(const State& s, int action, std::uint64_t noise) const {
  return step_impl(s, action, noise, config_.noise_sigma);
}

StepResult DrivingModel::step_impl(const State& s, int action, std::uint64_t noise,
                                   double sigma) const {
  const auto& prev = static_cast<const DrivingState&>(s);
  const DrivingAction act = DrivingAction::decode(action);
  const double dt = config_.dt;

  auto next = std::make_shared<DrivingState>(prev);
  DrivingState& st = *next;

  // Ego: lane decision, acceleration, tracking.
  int target_lane = st.ego_lane;
  bool lane_changed = false;
  if (act.lane == LaneChoice::Left && graph_.lanes[st.ego_lane].left >= 0) {
    target_lane = graph_.lanes[st.ego_lane].left;
    lane_changed = true;
  } else if (act.lane == LaneChoice::Right && graph_.lanes[st.ego_lane].right >= 0) {
    target_lane = graph_.lanes[st.ego_lane].right;
    lane_changed = true;
  }
  // Infeasible Left/Right fall back to Keep: the action space stays fixed
  // at 9 everywhere.
  st.ego_lane = target_lane;
  const int ego_route = graph_.route_of_lane(st.ego_lane);
  const Polyline& ego_path = graph_.route_paths[ego_route];

  double cmd = 0.0;
  if (act.accel == AccelChoice::Acc) cmd = config_.accel;
  if (act.accel == AccelChoice::Dec) cmd = -config_.accel;
  const double ego_speed = std::clamp(prev.ego.speed + cmd * dt, 0.0, config_.ego_max_speed);
  st.ego = bicycle_track(prev.ego, ego_path, ego_speed, dt);
  st.ego.pos = st.ego.pos + displacement_noise(sigma, mix64(noise, 1));
  st.ego_progress = ego_path.project(st.ego.pos).s;

  // Exo-agents: distracted ones blindly track their route at their current
  // speed; attentive ones brake in proportion to the time-to-collision with
  // the nearest conflicting agent and recover toward their cruise speed.
  for (std::size_t i = 0; i < st.exo.size(); ++i) {
    const AgentPhys& agent = prev.exo[i];
    HiddenVar& hv = st.hidden[i];
    const Polyline& path = graph_.route_paths[hv.route];
    double new_speed = agent.speed;
    if (hv.attentive) {
      const double t = min_ttc_against(agent, prev, static_cast<int>(i));
      if (t < kReactHorizon) {
        new_speed = std::max(0.0, agent.speed - config_.accel * (1.0 - t / kReactHorizon) * dt);
      } else {
        const double cap =
            agent.kind == AgentKind::Car ? config_.car_max_speed : config_.ped_max_speed;
        new_speed = std::min({hv.cruise, agent.speed + 0.5 * config_.accel * dt, cap});
      }
    }
    AgentPhys moved = agent.kind == AgentKind::Car ? bicycle_track(agent, path, new_speed, dt)
                                                   : walk_track(agent, path, new_speed, dt);
    moved.pos = moved.pos + displacement_noise(sigma, mix64(noise, 100 + static_cast<int>(i)));
    st.exo[i] = moved;
    hv.progress = path.project(moved.pos).s;
  }

  // Collision and goal checks.
  const Vec2 ego_half = footprint(st.ego.kind) * 0.5;
  for (const AgentPhys& other : st.exo) {
    const Vec2 other_half = footprint(other.kind) * 0.5;
    if (obb_overlap(st.ego.pos, st.ego.heading, ego_half, other.pos, other.heading,
                    other_half)) {
      st.collided = true;
      st.collision_speed = st.ego.speed;
      break;
    }
  }
  if (!st.collided && st.ego_progress >= config_.goal_progress) st.reached_goal = true;

  StepResult out;
  const double rv = 4.0 * (st.ego.speed - config_.ego_max_speed) / config_.ego_max_speed;
  const double racc = act.accel == AccelChoice::Dec ? -0.1 : 0.0;
  const double rchange = lane_changed ? -4.0 : 0.0;
  out.reward.safe = rv + racc + rchange;
  out.reward.collision =
      st.collided ? -1000.0 * (st.collision_speed * st.collision_speed + 0.5) : 0.0;

  // Observation: discretized physical states of every agent.
  auto grid = [](double v, double res) {
    return static_cast<std::int64_t>(std::floor(v / res));
  };
  std::uint64_t h = 0x811C9DC5u;
  auto fold = [&h](std::int64_t v) { h = mix64(h ^ static_cast<std::uint64_t>(v)); };
  fold(grid(st.ego.pos.x, config_.pos_res));
  fold(grid(st.ego.pos.y, config_.pos_res));
  fold(grid(st.ego.speed, config_.speed_res));
  fold(grid(st.ego.heading, config_.heading_res));
  for (const AgentPhys& a : st.exo) {
    fold(grid(a.pos.x, config_.pos_res));
    fold(grid(a.pos.y, config_.pos_res));
    fold(grid(a.speed, config_.speed_res));
    fold(grid(a.heading, config_.heading_res));
  }
  fold(st.collided ? 1 : 0);
  fold(st.reached_goal ? 1 : 0);
  out.observation = h;
  out.next = std::move(next);
  return out;
}

FactoredReward DrivingModel::mean_reward(const State& s, int action) const {
  // Noise-free proxy: the displacement perturbation has marginal effect on
  // the immediate reward.
  return step_impl(s, action, 0, 0.0).reward;
}

double DrivingModel::raw_reward(const DrivingState& prev, int action,
                                const DrivingState& next) const {
  const DrivingAction act = DrivingAction::decode(action);
  const bool lane_changed = next.ego_lane != prev.ego_lane;
  return 4.0 * (next.ego.speed - config_.ego_max_speed) / config_.ego_max_speed +
         (act.accel == AccelChoice::Dec ? -0.1 : 0.0) + (lane_changed ? -4.0 : 0.0) +
         (next.collided ? -1000.0 * (next.collision_speed * next.collision_speed + 0.5)
                        : 0.0);
}

double DrivingModel::smooth_reward(const DrivingState& prev, int action,
                                   const DrivingState& next) const {
  (void)prev;
  const DrivingAction act = DrivingAction::decode(action);
  double r = 0.05 * next.ego.speed / config_.ego_max_speed;
  if (act.lane != LaneChoice::Keep) r -= 0.025;
  const double t = ttc(next);
  if (std::isfinite(t)) {
    const double tc = std::max(t, 0.1);  // the proximity term is singular at 0
    r -= 1.0 / (9.0 * tc * tc);
  }
  return r;
}

std::size_t DrivingModel::feature_length() const {
  return 4 * (1 + 5 * static_cast<std::size_t>(config_.k_nearest)) + 4;
}

FeatureVector DrivingModel::encode_history(std::span<const StatePtr> frames) const {
  FeatureVector out;
  out.values.reserve(feature_length());
  const int k = config_.k_nearest;

  // Oldest-first, padded by repeating the oldest frame; each frame is
  // registered to its own ego pose.
  std::vector<const DrivingState*> seq;
  for (const StatePtr& f : frames) seq.push_back(static_cast<const DrivingState*>(f.get()));
  if (seq.empty()) throw std::invalid_argument("encode_history needs a frame");
  while (seq.size() < 4) seq.insert(seq.begin(), seq.front());
  while (seq.size() > 4) seq.erase(seq.begin());

  for (const DrivingState* s : seq) {
    out.values.push_back(s->ego.speed);
    const Vec2 ego_v = velocity(s->ego);
    // k nearest exo-agents by distance (stable on ties), ego frame.
    std::vector<std::pair<double, int>> order;
    for (std::size_t i = 0; i < s->exo.size(); ++i) {
      order.emplace_back((s->exo[i].pos - s->ego.pos).norm(), static_cast<int>(i));
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (int slot = 0; slot < k; ++slot) {
      if (slot < static_cast<int>(order.size())) {
        const AgentPhys& a = s->exo[order[slot].second];
        const Vec2 rel = (a.pos - s->ego.pos).rotated(-s->ego.heading);
        const Vec2 relv = (velocity(a) - ego_v).rotated(-s->ego.heading);
        out.values.push_back(rel.x);
        out.values.push_back(rel.y);
        out.values.push_back(relv.x);
        out.values.push_back(relv.y);
        out.values.push_back(wrap_angle(a.heading - s->ego.heading));
      } else {
        for (int z = 0; z < 5; ++z) out.values.push_back(0.0);
      }
    }
  }

  // Lane features of the newest frame.
  const DrivingState* cur = seq.back();
  const Lane& lane = graph_.lanes[cur->ego_lane];
  const Polyline::Projection proj = lane.path.project(cur->ego.pos);
  const Vec2 tangent = lane.path.tangent_at(proj.s);
  out.values.push_back(proj.lateral);
  out.values.push_back(wrap_angle(cur->ego.heading - std::atan2(tangent.y, tangent.x)));
  out.values.push_back(lane.left >= 0 ? 1.0 : 0.0);
  out.values.push_back(lane.right >= 0 ? 1.0 : 0.0);
  return out;
}

// ---------------------------------------------------------------------------

HiddenSample sample_hidden(const LaneGraph& graph, const DrivingConfig& config,
                           std::span<const AgentPhys> agents, std::uint64_t noise) {
  HiddenSample out;
  out.hidden.reserve(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const AgentPhys& a = agents[i];
    const LaneKind want = a.kind == AgentKind::Car ? LaneKind::Road : LaneKind::Walkway;
    std::vector<int> feasible;
    int nearest = 0;
    double nearest_d = kInf;
    for (std::size_t r = 0; r < graph.route_paths.size(); ++r) {
      if (graph.route_kinds[r] != want) continue;
      const Polyline::Projection proj = graph.route_paths[r].project(a.pos);
      const Vec2 tangent = graph.route_paths[r].tangent_at(proj.s);
      const double align =
          std::abs(wrap_angle(a.heading - std::atan2(tangent.y, tangent.x)));
      const double d = std::abs(proj.lateral);
      if (d < nearest_d) {
        nearest_d = d;
        nearest = static_cast<int>(r);
      }
      if (d <= 2.5 && align <= M_PI / 3.0) feasible.push_back(static_cast<int>(r));
    }
    HiddenVar hv;
    if (feasible.empty()) {
      hv.route = nearest;
      ++out.infeasible;
    } else {
      const std::uint64_t pick = mix64(noise, 2 * i);
      hv.route = feasible[static_cast<std::size_t>(to_unit(pick) * feasible.size()) %
                          feasible.size()];
    }
    hv.attentive = to_unit(mix64(noise, 2 * i + 1)) < config.p_attentive;
    hv.progress = graph.route_paths[hv.route].project(a.pos).s;
    hv.cruise = a.speed;
    out.hidden.push_back(hv);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::shared_ptr<const DrivingState> quantize_observation(const DrivingState& s,
                                                         const DrivingConfig& config) {
  auto snap = [](double v, double res) { return (std::floor(v / res) + 0.5) * res; };
  auto out = std::make_shared<DrivingState>(s);
  auto quantize = [&](AgentPhys& a) {
    a.pos.x = snap(a.pos.x, config.pos_res);
    a.pos.y = snap(a.pos.y, config.pos_res);
    a.speed = snap(a.speed, config.speed_res);
    a.heading = snap(a.heading, config.heading_res);
  };
  quantize(out->ego);
  for (AgentPhys& a : out->exo) quantize(a);
  for (HiddenVar& h : out->hidden) h = HiddenVar{};
  return out;
}

DrivingEnvironment::DrivingEnvironment(LaneGraph graph, DrivingConfig config)
    : model_(std::move(graph), config) {}

StatePtr DrivingEnvironment::observable_frame(const Belief&) const { return observed_; }

Belief DrivingEnvironment::reanchor(Belief b) const {
  // The observation is the discretized physical state of every agent, so
  // the physical components of each particle re-seat to the observed cell
  // centers; route/attention hypotheses (the genuinely hidden part) carry
  // over, with route progress re-projected.
  const LaneGraph& g = model_.graph();
  for (auto& [state, weight] : b.particles) {
    const auto& ds = static_cast<const DrivingState&>(*state);
    auto fresh = std::make_shared<DrivingState>(*observed_);
    fresh->ego_lane = ds.ego_lane;
    fresh->hidden = ds.hidden;
    fresh->collided = ds.collided;
    fresh->reached_goal = ds.reached_goal;
    fresh->ego_progress =
        g.route_paths[g.route_of_lane(fresh->ego_lane)].project(fresh->ego.pos).s;
    for (std::size_t i = 0; i < fresh->hidden.size(); ++i) {
      fresh->hidden[i].progress =
          g.route_paths[fresh->hidden[i].route].project(fresh->exo[i].pos).s;
    }
    state = std::move(fresh);
  }
  return b;
}

void DrivingEnvironment::reset(std::uint64_t seed) {
  seed_ = seed;
  steps_ = 0;
  const LaneGraph& g = model_.graph();
  const DrivingConfig& cfg = model_.config();

  auto st = std::make_shared<DrivingState>();
  st->ego.kind = AgentKind::Car;
  st->ego_lane = 0;
  const Polyline& ego_path = g.route_paths[g.route_of_lane(0)];
  st->ego_progress = 30.0;
  st->ego.pos = ego_path.point_at(st->ego_progress);
  const Vec2 tangent = ego_path.tangent_at(st->ego_progress);
  st->ego.heading = std::atan2(tangent.y, tangent.x);
  st->ego.speed = 3.0;

  // Exo-agents all cross the ego corridor: cars on the east/west lanes,
  // pedestrians on the walkways, each timed to reach the conflict area
  // within the ego's own approach window so the crossing stays contested.
  const std::vector<int> spawn_routes = {4, 6, 5, 7, 8, 9};
  Rng rng(mix64(seed, 0xD81E));
  for (int i = 0; i < cfg.exo_count; ++i) {
    const int route = spawn_routes[i % spawn_routes.size()];
    const Polyline& path = g.route_paths[route];
    const bool walkway = g.route_kinds[route] == LaneKind::Walkway;
    AgentPhys a;
    a.kind = walkway ? AgentKind::Pedestrian : AgentKind::Car;
    a.speed = walkway ? 0.8 + 0.7 * rng.next_unit() : 2.5 + 2.5 * rng.next_unit();
    const double arrival = 1.5 + 6.5 * rng.next_unit();  // seconds to the box
    const double mid = 0.5 * path.length();
    const double progress = std::max(0.0, mid - 7.0 - a.speed * arrival);
    a.pos = path.point_at(progress);
    const Vec2 t = path.tangent_at(progress);
    a.heading = std::atan2(t.y, t.x);
    st->exo.push_back(a);
  }
  st->hidden = sample_hidden(g, cfg, st->exo, mix64(seed, 0x41DD)).hidden;
  // The environment's hidden truth: attention resampled independently of
  // what belief particles will guess.
  for (std::size_t i = 0; i < st->hidden.size(); ++i) {
    st->hidden[i].attentive = to_unit(mix64(mix64(seed, 0xA77E), i)) < cfg.p_attentive;
  }
  state_ = std::move(st);
  observed_ = quantize_observation(*state_, cfg);
}

EnvStep DrivingEnvironment::step(int action) {
  StepResult r = model_.step(*state_, action, mix64(seed_, 0xE000 + steps_));
  ++steps_;
  const auto prev = state_;
  state_ = std::static_pointer_cast<const DrivingState>(r.next);
  observed_ = quantize_observation(*state_, model_.config());
  EnvStep out;
  out.observation = r.observation;
  out.reward = r.reward;
  out.smooth_reward = model_.smooth_reward(*prev, action, *state_);
  out.done = model_.is_terminal(*state_);
  out.speed = state_->ego.speed;
  out.ttc = model_.ttc(*state_);
  out.near_miss = out.ttc < 0.33;
  out.ego_x = state_->ego.pos.x;
  out.ego_y = state_->ego.pos.y;
  out.ego_heading = state_->ego.heading;
  return out;
}

Belief DrivingEnvironment::initial_belief(int particle_count, std::uint64_t seed) const {
  Belief b;
  b.particles.reserve(particle_count);
  for (int i = 0; i < particle_count; ++i) {
    auto particle = std::make_shared<DrivingState>(*state_);
    particle->hidden =
        sample_hidden(model_.graph(), model_.config(), particle->exo, mix64(seed, i)).hidden;
    b.particles.emplace_back(std::move(particle), 1.0 / particle_count);
  }
  return b;
}

}  // namespace planlearn::driving
