#pragma once

#include "gfnal/rng.hpp"

#include <array>
#include <cstdlib>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace gfnal {

/// A grid cell (column i, row j).
struct GridPoint {
  int i = 0;
  int j = 0;
  friend auto operator<=>(const GridPoint&, const GridPoint&) = default;
};

/// Position plus the number of moves taken since the origin. Carrying the step
/// counter makes the state graph acyclic even though moves can revisit cells.
struct GridState {
  int x = 0;
  int y = 0;
  int t = 0;
  [[nodiscard]] GridPoint point() const noexcept { return {x, y}; }
  friend auto operator<=>(const GridState&, const GridState&) = default;
};

enum class Action : int { up = 0, down = 1, left = 2, right = 3, stop = 4 };
inline constexpr std::size_t kNumActions = 5;
inline constexpr std::array<Action, kNumActions> kAllActions{Action::up, Action::down, Action::left, Action::right,
                                                            Action::stop};

inline constexpr std::size_t index(Action a) noexcept { return static_cast<std::size_t>(a); }

inline const char* to_string(Action a) noexcept {
  switch (a) {
    case Action::up: return "up";
    case Action::down: return "down";
    case Action::left: return "left";
    case Action::right: return "right";
    case Action::stop: return "stop";
  }
  return "?";
}

inline constexpr std::array<int, 2> delta(Action a) noexcept {
  switch (a) {
    case Action::up: return {0, 1};
    case Action::down: return {0, -1};
    case Action::left: return {-1, 0};
    case Action::right: return {1, 0};
    case Action::stop: return {0, 0};
  }
  return {0, 0};
}

using ActionMask = std::array<bool, kNumActions>;  // true = allowed

struct MaskConfig {
  int min_length = 50;
  int max_length = 100;
  double eps_stop = 0.5;
  bool forbid_backtrack = true;
  bool depth_aware_stop = true;

  void validate() const {
    if (!(min_length > 0 && min_length <= max_length))
      throw std::invalid_argument("mask config requires 0 < min_length <= max_length");
    if (!(eps_stop >= 0.0 && eps_stop <= 1.0)) throw std::invalid_argument("eps_stop must lie in [0, 1]");
  }
};

struct Terminal {
  GridPoint point;
  friend bool operator==(const Terminal&, const Terminal&) = default;
};

class InvalidActionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The square lattice MDP: start at (0,0,0), move one cell per step, end with Stop.
struct GridEnv {
  int size = 30;
  MaskConfig mask;

  [[nodiscard]] bool in_bounds(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < size && y < size; }
  [[nodiscard]] bool in_bounds(const GridState& s) const noexcept { return in_bounds(s.x, s.y); }
  [[nodiscard]] int cell_index(GridPoint p) const noexcept { return p.j * size + p.i; }
  [[nodiscard]] GridPoint cell(int idx) const noexcept { return {idx % size, idx / size}; }
  [[nodiscard]] int cell_count() const noexcept { return size * size; }

  void require_in_bounds(const GridState& s) const {
    if (!in_bounds(s) || s.t < 0)
      throw std::out_of_range("grid state (" + std::to_string(s.x) + "," + std::to_string(s.y) + "," +
                              std::to_string(s.t) + ") is outside the " + std::to_string(size) + "x" +
                              std::to_string(size) + " grid");
  }

  /// Probability that Stop is offered at step t (before any forced-stop rule).
  [[nodiscard]] double stop_allow_probability(int t) const noexcept {
    if (t >= mask.max_length) return 1.0;
    if (t < mask.min_length) return 1.0 - mask.eps_stop;
    if (!mask.depth_aware_stop) return 1.0;
    return static_cast<double>(t - mask.min_length + 1) / static_cast<double>(mask.max_length - mask.min_length + 1);
  }

  /// Feasible actions at `state`. The Stop decision may consume one draw from `rng`.
  [[nodiscard]] ActionMask valid_actions(const GridState& state, const std::optional<GridState>& prev, Engine& rng) const {
    require_in_bounds(state);
    ActionMask m{};
    if (state.t >= mask.max_length) {
      m[index(Action::stop)] = true;
      return m;
    }
    bool any_move = false;
    for (Action a : {Action::up, Action::down, Action::left, Action::right}) {
      const auto [dx, dy] = delta(a);
      const int nx = state.x + dx, ny = state.y + dy;
      bool ok = in_bounds(nx, ny);
      if (ok && mask.forbid_backtrack && prev && prev->x == nx && prev->y == ny) ok = false;
      m[index(a)] = ok;
      any_move = any_move || ok;
    }
    m[index(Action::stop)] = bernoulli(rng, stop_allow_probability(state.t));
    if (!any_move) m[index(Action::stop)] = true;
    return m;
  }

  [[nodiscard]] std::variant<GridState, Terminal> step(const GridState& state, Action action) const {
    require_in_bounds(state);
    if (action == Action::stop) return Terminal{state.point()};
    const auto [dx, dy] = delta(action);
    GridState next{state.x + dx, state.y + dy, state.t + 1};
    if (!in_bounds(next))
      throw InvalidActionError(std::string("action ") + to_string(action) + " leaves the grid from (" +
                               std::to_string(state.x) + "," + std::to_string(state.y) + ")");
    return next;
  }

  /// Predecessors of `state` inside the DAG rooted at the origin: in-bounds
  /// cells one move away at step t-1 that are themselves reachable in t-1
  /// moves. Each entry carries the action leading from parent to `state`.
  [[nodiscard]] std::vector<std::pair<GridState, Action>> parents(const GridState& state) const {
    require_in_bounds(state);
    if (state.t == 0) throw std::invalid_argument("the origin state has no parents");
    std::vector<std::pair<GridState, Action>> out;
    for (Action a : {Action::up, Action::down, Action::left, Action::right}) {
      const auto [dx, dy] = delta(a);
      const GridState p{state.x - dx, state.y - dy, state.t - 1};
      if (in_bounds(p) && p.x + p.y <= p.t && (p.t - p.x - p.y) % 2 == 0) out.emplace_back(p, a);
    }
    return out;
  }
};

}  // namespace gfnal
