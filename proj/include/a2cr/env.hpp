#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace a2cr {

/// Tile codes used in the grid and in the text tile map.
namespace tile {
inline constexpr char kEmpty = '.';
inline constexpr char kSolid = '#';
inline constexpr char kCoin = 'o';
inline constexpr char kEnemy = 'E';
inline constexpr char kGoal = 'G';
}  // namespace tile

/// Luminance bands of the renderer. Background and ground carry a fixed
/// world-anchored grain of at most +-kTexture around their band centre.
namespace luminance {
inline constexpr float kBackground = 0.1f;
inline constexpr float kGoal = 0.3f;
inline constexpr float kGround = 0.6f;
inline constexpr float kEnemy = 0.8f;
inline constexpr float kCoin = 0.9f;
inline constexpr float kAgent = 1.0f;
inline constexpr float kTexture = 0.1f;
}  // namespace luminance

/// Discrete action set mirroring a 12-entry complex-movement layout.
enum class Action : int {
  Noop = 0,
  Left,
  Right,
  Jump,
  LeftJump,
  RightJump,
  RunLeft,
  RunRight,
  RunLeftJump,
  RunRightJump,
  Duck,
  DuckJump,
};
inline constexpr std::size_t kNumActions = 12;
std::string_view action_name(int action);

/// Static level description. grid[row][col], row 0 at the top.
struct WorldSpec {
  std::size_t length = 0;  ///< columns (tiles)
  std::size_t rows = 8;
  std::vector<std::string> grid;
  int tile_px = 8;
  int frame_width = 64;
  int frame_height = 64;
  int gravity = 1;
  int jump_impulse = 7;
  int hop_impulse = 5;
  int max_fall_speed = 8;
  int walk_speed = 2;
  int run_speed = 3;
  float progress_scale = 0.5f;
  std::size_t time_limit = 0;

  char at(std::size_t row, std::size_t col) const { return grid[row][col]; }
  int level_width_px() const { return static_cast<int>(length) * tile_px; }
  int scroll_margin() const { return frame_width * 2 / 5; }
  std::size_t goal_column() const;
};

/// Throws ContractViolation when a world breaks its structural invariants
/// (power-of-two frame, safe spawn columns, single goal in the last column).
void validate_world(const WorldSpec& world);

/// Deterministic procedural level; completable by construction.
WorldSpec generate_world(std::uint64_t seed, std::size_t length);

/// Plain-text tile map: a header line `@ key=value ...` followed by one line
/// per tile row, one character per tile.
std::string to_tilemap(const WorldSpec& world);
WorldSpec parse_tilemap(std::string_view text);

struct EnvState {
  int x = 0;  ///< agent world-x of the left edge, pixels
  int y = 0;  ///< agent top edge, pixels
  int vy = 0;
  int scroll = 0;
  std::vector<std::uint8_t> coin_taken;  ///< per grid cell, row-major
  std::size_t steps = 0;
  bool alive = true;
  bool grounded = true;
  bool reached_goal = false;
  bool done = false;
};

struct StepResult {
  std::vector<float> frame;
  float reward = 0.0f;
  bool done = false;
  int world_x = 0;
  bool died = false;
  bool reached_goal = false;
  int coins = 0;
  int scroll_delta = 0;
};

/// The most recent k frames, oldest first, laid out [k][H][W].
class FrameStack {
 public:
  FrameStack() = default;
  FrameStack(std::size_t depth, std::size_t height, std::size_t width);

  void fill(std::span<const float> frame);
  void push(std::span<const float> frame);

  std::size_t depth() const noexcept { return depth_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> frame(std::size_t i) const;
  std::span<const float> latest() const { return frame(depth_ - 1); }

  friend bool operator==(const FrameStack&, const FrameStack&) = default;

 private:
  std::size_t depth_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> data_;
};

/// Renders the visible window; scrolling is a pure horizontal translation.
std::vector<float> render(const EnvState& state, const WorldSpec& world, bool draw_agent = true);

/// Deterministic side-scroller. One instance per worker.
class ScrollRunner {
 public:
  explicit ScrollRunner(WorldSpec world, std::size_t stack_depth = 3);

  /// Spawns the agent at a seed-dependent x inside the safe columns.
  const FrameStack& reset(std::uint64_t seed);
  StepResult step(int action);

  const WorldSpec& world() const noexcept { return world_; }
  const EnvState& state() const noexcept { return state_; }
  const FrameStack& observation() const noexcept { return stack_; }
  /// Overrides the dynamic state (fixtures, tests) and re-renders the stack.
  void set_state(const EnvState& state);

 private:
  bool solid_at(int px, int py) const;
  bool box_hits_solid(int x, int y) const;
  bool box_hits(int x, int y, char kind) const;

  WorldSpec world_;
  EnvState state_;
  FrameStack stack_;
};

/// Runs right and jumps when a gap, enemy or block is just ahead.
int scripted_runner_action(const ScrollRunner& env);

std::vector<std::uint8_t> encode_pgm(std::span<const float> pixels, std::size_t width, std::size_t height);
void write_pgm(const std::filesystem::path& path, std::span<const float> pixels, std::size_t width,
               std::size_t height);

}  // namespace a2cr
