#include "a2cr/env.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "a2cr/error.hpp"

namespace a2cr {

namespace {

constexpr int kAgentSize = 8;
constexpr std::size_t kGroundRow = 6;
constexpr std::size_t kSpawnColumns = 5;

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

bool has_jump(Action a) {
  switch (a) {
    case Action::Jump:
    case Action::LeftJump:
    case Action::RightJump:
    case Action::RunLeftJump:
    case Action::RunRightJump:
      return true;
    default:
      return false;
  }
}

int horizontal_speed(Action a, const WorldSpec& w) {
  switch (a) {
    case Action::Left:
    case Action::LeftJump:
      return -w.walk_speed;
    case Action::Right:
    case Action::RightJump:
      return w.walk_speed;
    case Action::RunLeft:
    case Action::RunLeftJump:
      return -w.run_speed;
    case Action::RunRight:
    case Action::RunRightJump:
      return w.run_speed;
    default:
      return 0;
  }
}

}  // namespace

std::string_view action_name(int action) {
  static constexpr std::array<std::string_view, kNumActions> names{
      "noop",     "left",      "right",         "jump",           "left+jump", "right+jump",
      "run-left", "run-right", "run-left+jump", "run-right+jump", "duck",      "duck+jump"};
  if (action < 0 || static_cast<std::size_t>(action) >= kNumActions) throw ContractViolation("action out of range");
  return names[static_cast<std::size_t>(action)];
}

std::size_t WorldSpec::goal_column() const { return length - 1; }

void validate_world(const WorldSpec& w) {
  if (!is_power_of_two(w.frame_width) || !is_power_of_two(w.frame_height)) {
    throw ContractViolation("frame dimensions must be powers of two");
  }
  if (w.tile_px <= 0 || w.frame_height % w.tile_px != 0 ||
      w.rows != static_cast<std::size_t>(w.frame_height / w.tile_px)) {
    throw ContractViolation("tile rows must cover the frame height exactly");
  }
  if (w.length < kSpawnColumns + 2 || w.grid.size() != w.rows) throw ContractViolation("world grid too small");
  for (const auto& row : w.grid) {
    if (row.size() != w.length) throw ContractViolation("ragged world grid");
  }
  if (w.level_width_px() < w.frame_width) throw ContractViolation("level narrower than the frame");
  for (std::size_t c = 0; c < kSpawnColumns; ++c) {
    if (w.grid[kGroundRow][c] != tile::kSolid) throw ContractViolation("spawn columns must have solid ground");
    for (std::size_t r = 0; r < kGroundRow; ++r) {
      if (w.grid[r][c] != tile::kEmpty) throw ContractViolation("spawn columns must be clear above ground");
    }
  }
  std::size_t goal_columns = 0;
  for (std::size_t c = 0; c < w.length; ++c) {
    bool goal = false;
    for (std::size_t r = 0; r < w.rows; ++r) goal = goal || w.grid[r][c] == tile::kGoal;
    if (goal) {
      ++goal_columns;
      if (c != w.length - 1) throw ContractViolation("goal must be in the final column");
    }
  }
  if (goal_columns != 1) throw ContractViolation("world must contain exactly one goal column");
  if (w.time_limit == 0) throw ContractViolation("time limit must be positive");
}

WorldSpec generate_world(std::uint64_t seed, std::size_t length) {
  if (length < 20) throw ContractViolation("world length must be at least 20 tiles");
  WorldSpec w;
  w.length = length;
  w.rows = 8;
  w.grid.assign(w.rows, std::string(length, tile::kEmpty));
  w.time_limit = 6 * length;
  for (std::size_t c = 0; c < length; ++c) {
    w.grid[kGroundRow][c] = tile::kSolid;
    w.grid[kGroundRow + 1][c] = tile::kSolid;
  }
  // Columns with nothing but ground; candidates for forced features.
  std::vector<bool> plain(length, true);
  std::mt19937_64 rng(seed);
  auto roll = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const std::size_t last_feature = length - 4;
  std::size_t gaps = 0;
  std::size_t coins = 0;
  std::size_t col = kSpawnColumns;
  while (col < last_feature) {
    const int r = roll(0, 99);
    if (r < 15) {
      col += static_cast<std::size_t>(roll(1, 3));
    } else if (r < 50) {
      const auto width = static_cast<std::size_t>(roll(1, 3));
      if (col + width + 5 > last_feature) break;
      for (std::size_t c = col; c < col + width; ++c) {
        w.grid[kGroundRow][c] = tile::kEmpty;
        w.grid[kGroundRow + 1][c] = tile::kEmpty;
        plain[c] = false;
      }
      ++gaps;
      col += width + 5;
    } else if (r < 62) {
      const auto height = static_cast<std::size_t>(roll(1, 2));
      const auto width = static_cast<std::size_t>(roll(1, 2));
      if (col + width + 6 > last_feature) break;
      for (std::size_t c = col; c < col + width; ++c) {
        for (std::size_t h = 1; h <= height; ++h) w.grid[kGroundRow - h][c] = tile::kSolid;
        plain[c] = false;
      }
      col += width + 6;
    } else if (r < 88) {
      w.grid[kGroundRow - 1][col] = tile::kEnemy;
      plain[col] = false;
      col += 7;
    } else {
      const auto n = static_cast<std::size_t>(roll(1, 3));
      for (std::size_t c = col; c < std::min(col + n, last_feature); ++c) {
        w.grid[3][c] = tile::kCoin;
        plain[c] = false;
        ++coins;
      }
      col += n + 1;
    }
  }

  // Guarantee at least one gap and three coins on plain stretches.
  auto plain_run = [&](std::size_t c, std::size_t span) {
    if (c + span > last_feature) return false;
    for (std::size_t k = c; k < c + span; ++k) {
      if (!plain[k]) return false;
    }
    return true;
  };
  for (std::size_t c = kSpawnColumns + 1; gaps == 0 && c < last_feature; ++c) {
    if (plain_run(c - 1, 5)) {
      w.grid[kGroundRow][c + 1] = tile::kEmpty;
      w.grid[kGroundRow + 1][c + 1] = tile::kEmpty;
      plain[c + 1] = false;
      ++gaps;
    }
  }
  for (std::size_t c = kSpawnColumns; coins < 3 && c < last_feature; ++c) {
    if (plain_run(c, 1)) {
      w.grid[3][c] = tile::kCoin;
      plain[c] = false;
      ++coins;
    }
  }

  const std::size_t goal = length - 1;
  for (std::size_t r = 0; r < kGroundRow; ++r) w.grid[r][goal] = tile::kGoal;
  validate_world(w);
  return w;
}

std::string to_tilemap(const WorldSpec& w) {
  std::ostringstream os;
  os << "@ tile=" << w.tile_px << " width=" << w.frame_width << " height=" << w.frame_height
     << " gravity=" << w.gravity << " jump=" << w.jump_impulse << " hop=" << w.hop_impulse
     << " max_fall=" << w.max_fall_speed << " walk=" << w.walk_speed << " run=" << w.run_speed
     << " progress_scale=" << w.progress_scale << " time_limit=" << w.time_limit << '\n';
  for (const auto& row : w.grid) os << row << '\n';
  return os.str();
}

WorldSpec parse_tilemap(std::string_view text) {
  WorldSpec w;
  w.grid.clear();
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '@') {
      header = true;
      std::istringstream kv(line.substr(1));
      std::string item;
      while (kv >> item) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw FormatError("tile map header item without '=': " + item);
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        try {
          if (key == "tile") w.tile_px = std::stoi(val);
          else if (key == "width") w.frame_width = std::stoi(val);
          else if (key == "height") w.frame_height = std::stoi(val);
          else if (key == "gravity") w.gravity = std::stoi(val);
          else if (key == "jump") w.jump_impulse = std::stoi(val);
          else if (key == "hop") w.hop_impulse = std::stoi(val);
          else if (key == "max_fall") w.max_fall_speed = std::stoi(val);
          else if (key == "walk") w.walk_speed = std::stoi(val);
          else if (key == "run") w.run_speed = std::stoi(val);
          else if (key == "progress_scale") w.progress_scale = std::stof(val);
          else if (key == "time_limit") w.time_limit = static_cast<std::size_t>(std::stoul(val));
          else throw FormatError("unknown tile map header key: " + key);
        } catch (const std::logic_error&) {
          throw FormatError("bad tile map header value for " + key + ": " + val);
        }
      }
      continue;
    }
    for (char ch : line) {
      if (ch != tile::kEmpty && ch != tile::kSolid && ch != tile::kCoin && ch != tile::kEnemy && ch != tile::kGoal) {
        throw FormatError(std::string("unknown tile character '") + ch + "'");
      }
    }
    w.grid.push_back(line);
  }
  if (!header) throw FormatError("tile map is missing its '@' header line");
  if (w.grid.empty()) throw FormatError("tile map has no rows");
  w.rows = w.grid.size();
  w.length = w.grid.front().size();
  try {
    validate_world(w);
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("invalid tile map: ") + e.what());
  }
  return w;
}

FrameStack::FrameStack(std::size_t depth, std::size_t height, std::size_t width)
    : depth_(depth), height_(height), width_(width), data_(depth * height * width, 0.0f) {
  if (depth == 0) throw ContractViolation("frame stack depth must be positive");
}

void FrameStack::fill(std::span<const float> frame) {
  if (frame.size() != height_ * width_) throw ShapeError("frame size does not match the stack");
  for (std::size_t k = 0; k < depth_; ++k) std::copy(frame.begin(), frame.end(), data_.begin() + static_cast<std::ptrdiff_t>(k * frame.size()));
}

void FrameStack::push(std::span<const float> frame) {
  const std::size_t plane = height_ * width_;
  if (frame.size() != plane) throw ShapeError("frame size does not match the stack");
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(plane), data_.end(), data_.begin());
  std::copy(frame.begin(), frame.end(), data_.end() - static_cast<std::ptrdiff_t>(plane));
}

std::span<const float> FrameStack::frame(std::size_t i) const {
  if (i >= depth_) throw ContractViolation("frame index out of range");
  const std::size_t plane = height_ * width_;
  return std::span<const float>(data_).subspan(i * plane, plane);
}

namespace {

// World-anchored texture in [-1, 1); scrolling translates it with the tiles.
float texture(int wx, std::size_t sy) {
  std::uint32_t h = static_cast<std::uint32_t>(wx) * 0x9E3779B1u ^ static_cast<std::uint32_t>(sy) * 0x85EBCA77u;
  h ^= h >> 15;
  h *= 0x2C1B3C6Du;
  h ^= h >> 12;
  return static_cast<float>(h & 0xFFFFu) / 32768.0f - 1.0f;
}

}  // namespace

std::vector<float> render(const EnvState& s, const WorldSpec& w, bool draw_agent) {
  const auto width = static_cast<std::size_t>(w.frame_width);
  const auto height = static_cast<std::size_t>(w.frame_height);
  std::vector<float> frame(width * height, luminance::kBackground);
  for (std::size_t sx = 0; sx < width; ++sx) {
    const int wx = s.scroll + static_cast<int>(sx);
    if (wx < 0 || wx >= w.level_width_px()) continue;
    const auto col = static_cast<std::size_t>(wx / w.tile_px);
    for (std::size_t sy = 0; sy < height; ++sy) {
      const std::size_t row = sy / static_cast<std::size_t>(w.tile_px);
      const float grain = luminance::kTexture * texture(wx, sy);
      float lum = luminance::kBackground + grain;
      switch (w.grid[row][col]) {
        case tile::kSolid:
          lum = luminance::kGround + grain;
          break;
        case tile::kGoal:
          lum = luminance::kGoal;
          break;
        case tile::kEnemy:
          lum = s.coin_taken.empty() || !s.coin_taken[row * w.length + col] ? luminance::kEnemy
                                                                              : luminance::kBackground + grain;
          break;
        case tile::kCoin:
          lum = s.coin_taken.empty() || !s.coin_taken[row * w.length + col] ? luminance::kCoin
                                                                              : luminance::kBackground + grain;
          break;
        default:
          break;
      }
      frame[sy * width + sx] = lum;
    }
  }
  if (draw_agent) {
    const int ax = s.x - s.scroll;
    for (int dy = 0; dy < kAgentSize; ++dy) {
      const int py = s.y + dy;
      if (py < 0 || py >= w.frame_height) continue;
      for (int dx = 0; dx < kAgentSize; ++dx) {
        const int px = ax + dx;
        if (px < 0 || px >= w.frame_width) continue;
        frame[static_cast<std::size_t>(py) * width + static_cast<std::size_t>(px)] = luminance::kAgent;
      }
    }
  }
  return frame;
}

ScrollRunner::ScrollRunner(WorldSpec world, std::size_t stack_depth)
    : world_(std::move(world)),
      stack_(stack_depth, static_cast<std::size_t>(world_.frame_height), static_cast<std::size_t>(world_.frame_width)) {
  validate_world(world_);
  reset(0);
}

const FrameStack& ScrollRunner::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int spawn_span = static_cast<int>(kSpawnColumns) * world_.tile_px - 2 * kAgentSize;
  const int offset = std::uniform_int_distribution<int>(0, std::max(0, std::min(spawn_span, world_.scroll_margin() - world_.tile_px)))(rng);
  state_ = EnvState{};
  state_.x = world_.tile_px + offset;
  state_.y = static_cast<int>(kGroundRow) * world_.tile_px - kAgentSize;
  state_.coin_taken.assign(world_.rows * world_.length, 0);
  state_.grounded = true;
  stack_.fill(render(state_, world_));
  return stack_;
}

void ScrollRunner::set_state(const EnvState& state) {
  state_ = state;
  if (state_.coin_taken.size() != world_.rows * world_.length) state_.coin_taken.assign(world_.rows * world_.length, 0);
  stack_.fill(render(state_, world_));
}

bool ScrollRunner::solid_at(int px, int py) const {
  if (px < 0 || px >= world_.level_width_px()) return true;
  if (py < 0 || py >= world_.frame_height) return false;
  return world_.grid[static_cast<std::size_t>(py / world_.tile_px)][static_cast<std::size_t>(px / world_.tile_px)] ==
         tile::kSolid;
}

bool ScrollRunner::box_hits_solid(int x, int y) const {
  for (int py : {y, y + kAgentSize - 1}) {
    for (int px : {x, x + kAgentSize - 1}) {
      if (solid_at(px, py)) return true;
    }
  }
  return false;
}

bool ScrollRunner::box_hits(int x, int y, char kind) const {
  for (int py : {y, y + kAgentSize - 1}) {
    if (py < 0 || py >= world_.frame_height) continue;
    for (int px : {x, x + kAgentSize - 1}) {
      if (px < 0 || px >= world_.level_width_px()) continue;
      const auto r = static_cast<std::size_t>(py / world_.tile_px);
      const auto c = static_cast<std::size_t>(px / world_.tile_px);
      if (world_.grid[r][c] == kind && !state_.coin_taken[r * world_.length + c]) return true;
    }
  }
  return false;
}

StepResult ScrollRunner::step(int action_index) {
  if (state_.done) throw ContractViolation("step called on a finished episode");
  if (action_index < 0 || static_cast<std::size_t>(action_index) >= kNumActions) {
    throw ContractViolation("action index out of range: " + std::to_string(action_index));
  }
  const auto action = static_cast<Action>(action_index);
  EnvState& s = state_;
  const int x_before = s.x;
  const int scroll_before = s.scroll;
  const int bottom_before = s.y + kAgentSize;

  // Horizontal motion, one pixel at a time, blocked by solids and the left screen edge.
  const int vx = horizontal_speed(action, world_);
  const int dir = vx > 0 ? 1 : -1;
  for (int i = 0; i < std::abs(vx); ++i) {
    const int nx = s.x + dir;
    if (nx < s.scroll || nx + kAgentSize > world_.level_width_px() || box_hits_solid(nx, s.y)) break;
    s.x = nx;
  }

  // Vertical motion with gravity.
  if (s.grounded && has_jump(action)) {
    s.vy = -world_.jump_impulse;
  } else if (s.grounded && action == Action::DuckJump) {
    s.vy = -world_.hop_impulse;
  } else {
    s.vy = std::min(s.vy + world_.gravity, world_.max_fall_speed);
  }
  const int vdir = s.vy > 0 ? 1 : -1;
  for (int i = 0; i < std::abs(s.vy); ++i) {
    if (box_hits_solid(s.x, s.y + vdir)) {
      s.vy = 0;
      break;
    }
    s.y += vdir;
  }
  s.grounded = s.y + kAgentSize < world_.frame_height &&
               (solid_at(s.x, s.y + kAgentSize) || solid_at(s.x + kAgentSize - 1, s.y + kAgentSize));
  if (s.grounded && s.vy > 0) s.vy = 0;

  StepResult out;
  bool died = s.y >= world_.frame_height;
  if (!died) {
    // Enemies: landing on top defeats them, any other contact is fatal.
    for (int py : {s.y, s.y + kAgentSize - 1}) {
      for (int px : {s.x, s.x + kAgentSize - 1}) {
        if (py < 0 || py >= world_.frame_height || px < 0 || px >= world_.level_width_px()) continue;
        const auto r = static_cast<std::size_t>(py / world_.tile_px);
        const auto c = static_cast<std::size_t>(px / world_.tile_px);
        const std::size_t cell = r * world_.length + c;
        if (world_.grid[r][c] != tile::kEnemy || s.coin_taken[cell]) continue;
        const int enemy_top = static_cast<int>(r) * world_.tile_px;
        if (bottom_before <= enemy_top + 1 && s.y + kAgentSize > bottom_before) {
          s.coin_taken[cell] = 1;
        } else {
          died = true;
        }
      }
    }
  }
  if (!died) {
    // At most one coin per step keeps the per-step reward bounded.
    for (int py : {s.y, s.y + kAgentSize - 1}) {
      for (int px : {s.x, s.x + kAgentSize - 1}) {
        if (out.coins > 0 || py < 0 || py >= world_.frame_height) continue;
        const auto r = static_cast<std::size_t>(py / world_.tile_px);
        const auto c = static_cast<std::size_t>(px / world_.tile_px);
        const std::size_t cell = r * world_.length + c;
        if (world_.grid[r][c] == tile::kCoin && !s.coin_taken[cell]) {
          s.coin_taken[cell] = 1;
          ++out.coins;
        }
      }
    }
    s.reached_goal = s.x + kAgentSize > static_cast<int>(world_.goal_column()) * world_.tile_px;
  }
  s.alive = !died;

  if (!died && s.x - s.scroll > world_.scroll_margin()) {
    s.scroll = std::min(s.x - world_.scroll_margin(), world_.level_width_px() - world_.frame_width);
  }
  ++s.steps;

  const float progress =
      died ? 0.0f : std::clamp(world_.progress_scale * static_cast<float>(s.x - x_before), -1.0f, 1.0f);
  float reward = progress - 0.1f + 50.0f * static_cast<float>(out.coins);
  if (s.reached_goal) reward += 500.0f;
  if (died) reward -= 100.0f;

  s.done = died || s.reached_goal || s.steps >= world_.time_limit;
  out.frame = render(s, world_);
  stack_.push(out.frame);
  out.reward = reward;
  out.done = s.done;
  out.world_x = s.x;
  out.died = died;
  out.reached_goal = s.reached_goal;
  out.scroll_delta = s.scroll - scroll_before;
  return out;
}

int scripted_runner_action(const ScrollRunner& env) {
  const auto& s = env.state();
  const auto& w = env.world();
  constexpr int kRunRight = static_cast<int>(Action::RunRight);
  constexpr int kRunRightJump = static_cast<int>(Action::RunRightJump);
  if (!s.grounded) return kRunRight;
  const int feet_row = (s.y + kAgentSize) / w.tile_px;
  for (int d = 0; d <= 8; ++d) {
    const int px = s.x + kAgentSize + d;
    if (px >= w.level_width_px()) break;
    const auto col = static_cast<std::size_t>(px / w.tile_px);
    const bool gap = feet_row >= static_cast<int>(w.rows) || w.grid[static_cast<std::size_t>(feet_row)][col] != tile::kSolid;
    bool wall = false;
    for (int py : {s.y, s.y + kAgentSize - 1}) {
      if (py < 0) continue;
      const char t = w.grid[static_cast<std::size_t>(py / w.tile_px)][col];
      wall = wall || t == tile::kSolid || (t == tile::kEnemy && !s.coin_taken[static_cast<std::size_t>(py / w.tile_px) * w.length + col]);
    }
    if (gap || (wall && d >= 3)) return kRunRightJump;
  }
  return kRunRight;
}

std::vector<std::uint8_t> encode_pgm(std::span<const float> pixels, std::size_t width, std::size_t height) {
  if (pixels.size() != width * height) throw ShapeError("pgm pixel count does not match dimensions");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + pixels.size());
  for (float v : pixels) {
    const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
    out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0f)));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, std::span<const float> pixels, std::size_t width,
               std::size_t height) {
  const auto bytes = encode_pgm(pixels, width, height);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace a2cr
