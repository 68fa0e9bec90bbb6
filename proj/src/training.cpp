#include "a2cr/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "a2cr/error.hpp"

namespace a2cr {

namespace {

constexpr std::size_t kSuccessWindow = 100;

std::vector<float> stack_batch(std::span<const FrameStack* const> stacks) {
  std::vector<float> out;
  if (stacks.empty()) return out;
  out.reserve(stacks.size() * stacks.front()->data().size());
  for (const FrameStack* s : stacks) out.insert(out.end(), s->data().begin(), s->data().end());
  return out;
}

Tensor batch_tensor(const NetConfig& c, std::size_t batch, std::vector<float> data) {
  return Tensor({batch, c.stack, c.height, c.width}, std::move(data));
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + what);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto step = [](std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  };
  return step(step(step(a) ^ b) ^ c);
}

double td_target(double reward, double v_next, bool done, double gamma) {
  return done ? reward : reward + gamma * v_next;
}

int sample_action(std::span<const float> probs, std::mt19937_64& rng) {
  if (probs.empty()) throw ContractViolation("sampling from an empty distribution");
  double total = 0.0;
  for (float p : probs) total += p;
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

A2CLoss a2c_update(PolicyValueNet& net, Optimizer& opt, std::span<const Transition> batch, const HyperParams& hp) {
  if (batch.empty()) throw ContractViolation("a2c_update on an empty batch");
  const NetConfig& c = net.config();
  const std::size_t n = batch.size();
  std::vector<const FrameStack*> states;
  states.reserve(n);
  for (const auto& t : batch) states.push_back(&t.s_t);

  Graph g;
  const Var x = g.constant(batch_tensor(c, n, stack_batch(states)));
  const auto out = net.forward(g, x, Binding::Trainable);
  const auto values = g.value(out.value);

  std::vector<float> targets(n);
  std::vector<float> neg_adv(n);
  std::vector<int> actions(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = batch[i];
    const double y = td_target(t.r_t, t.v_next, t.done, hp.gamma);
    targets[i] = static_cast<float>(y);
    neg_adv[i] = -static_cast<float>(y - values[i]);
    actions[i] = t.a_t;
  }
  const Var actor = g.mean(g.mul(g.pick(out.log_probs, actions), g.constant(Tensor({n}, neg_adv))));
  const Var critic = g.mean(g.square(g.sub(g.constant(Tensor({n}, targets)), out.value)));
  const Var entropy = g.scale(g.mean(g.sum_last(g.mul(out.probs, out.log_probs))), -1.0f);
  const Var total = g.add(g.add(actor, g.scale(critic, static_cast<float>(hp.rho1))),
                          g.scale(entropy, -static_cast<float>(hp.rho2)));

  A2CLoss loss{g.scalar(actor), g.scalar(critic), g.scalar(entropy), g.scalar(total)};
  require_finite(loss.total, "A2C loss");
  net.params().zero_grad();
  g.backward(total);
  opt.step(net.params());
  return loss;
}

ReasonerCollector::ReasonerCollector(WorldSpec world, const NetConfig& net, std::uint64_t seed)
    : env_(std::move(world), net.stack), snapshot_(net, 0), rng_(seed), seed_(seed) {}

void ReasonerCollector::begin_episode(const PolicyValueNet& live) {
  snapshot_.params().copy_values_from(live.params());
  env_.reset(mix_seed(seed_, episodes_));
  const auto eval = snapshot_.evaluate(env_.observation().data());
  v_current_ = eval.value;
  probs_current_ = eval.policy.probs;
  need_reset_ = false;
}

CollectStep reasoner_collect_step(ReasonerCollector& c, const PolicyValueNet& live, ExploringPool& pool,
                                  const HyperParams& hp) {
  if (c.need_reset_) c.begin_episode(live);
  const FrameStack before = c.env_.observation();
  CollectStep out;
  out.action = sample_action(c.probs_current_, c.rng_);
  const StepResult step = c.env_.step(out.action);
  const FrameStack& after = c.env_.observation();
  out.reward = step.reward;
  out.done = step.done;
  out.success = step.reached_goal;

  float v_next = 0.0f;
  PolicyValueNet::Evaluation next_eval;
  if (!step.done) {
    next_eval = c.snapshot_.evaluate(after.data());
    v_next = next_eval.value;
  }
  out.gain = gain({v_next, c.v_current_, hp.learner_reward(step.reward), hp.w1});

  const auto prev = before.latest();
  const auto next = after.latest();
  out.shift = estimate_shift(prev, next, after.width(), after.height());
  out.exploration = state_exploration(prev, next, after.width(), after.height(), out.shift);
  out.entry = pool.label_and_push(out.gain, out.exploration.total);

  const auto a = after.data();
  const auto b = before.data();
  out.sample.delta.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.sample.delta[i] = a[i] - b[i];
  out.sample.label = out.entry.label.category();

  if (step.done) {
    ++c.episodes_;
    c.need_reset_ = true;
  } else {
    c.v_current_ = v_next;
    c.probs_current_ = std::move(next_eval.policy.probs);
  }
  return out;
}

double reasoner_update(ReasonerNet& net, Optimizer& opt, std::span<const ReasonerSample> batch,
                       const HyperParams& hp) {
  if (batch.empty()) throw ContractViolation("reasoner_update on an empty batch");
  const NetConfig& c = net.config();
  const std::size_t n = batch.size();
  std::vector<float> inputs;
  inputs.reserve(n * c.state_size());
  std::vector<float> targets(n * c.classes, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    if (batch[i].delta.size() != c.state_size()) throw ShapeError("reasoner sample has the wrong size");
    inputs.insert(inputs.end(), batch[i].delta.begin(), batch[i].delta.end());
    targets[i * c.classes + static_cast<std::size_t>(batch[i].label)] = 1.0f;
  }
  Graph g;
  const Var x = g.constant(batch_tensor(c, n, std::move(inputs)));
  const auto out = net.forward(g, x, Binding::Trainable);
  const Var loss = g.bce_with_logits(out.logits, Tensor({n, c.classes}, std::move(targets)), hp.bce_mode);
  const double value = g.scalar(loss);
  require_finite(value, "Reasoner loss");
  net.params().zero_grad();
  g.backward(loss);
  opt.step(net.params());
  return value;
}

WorldSpec training_world(const HyperParams& hp) {
  WorldSpec w = generate_world(hp.world_seed, hp.world_length);
  if (hp.episode_step_cap > 0) w.time_limit = hp.episode_step_cap;
  return w;
}

void write_checkpoint_dir(const std::filesystem::path& dir, const PolicyValueNet& policy, const ReasonerNet& reasoner,
                          const HyperParams& hp, std::uint64_t frames, double success_rate) {
  std::filesystem::create_directories(dir);
  save_checkpoint(policy.params(), dir / "policy_value.a2cr");
  save_checkpoint(reasoner.params(), dir / "reasoner.a2cr");
  std::ofstream m(dir / "manifest.txt");
  m << "frames = " << frames << '\n'
    << "seed = " << hp.seed << '\n'
    << "world_seed = " << hp.world_seed << '\n'
    << "config_hash = " << std::hex << config_hash(hp) << std::dec << '\n'
    << "success_rate = " << std::setprecision(6) << success_rate << '\n'
    << "policy_checksum = " << std::hex << policy.params().checksum() << '\n'
    << "reasoner_checksum = " << reasoner.params().checksum() << std::dec << '\n';
  std::ofstream(dir / "config.txt") << serialize_config(hp);
}

void load_checkpoint_dir(const std::filesystem::path& dir, PolicyValueNet& policy, ReasonerNet& reasoner) {
  for (const char* f : {"policy_value.a2cr", "reasoner.a2cr"}) {
    if (!std::filesystem::exists(dir / f)) throw FormatError("missing checkpoint file " + (dir / f).string());
  }
  load_checkpoint(policy.params(), dir / "policy_value.a2cr");
  load_checkpoint(reasoner.params(), dir / "reasoner.a2cr");
}

void write_report_csv(std::ostream& out, const TrainReport& r) {
  out << "frames,reasoner_frames,episodes,mean_return,mean_length,success_rate,actor_loss,critic_loss,entropy,"
         "reasoner_loss,p_breakout,p_self_improvement,p_hovering,p_prospect\n";
  out << std::setprecision(9);
  for (const auto& row : r.rows) {
    out << row.frames << ',' << row.reasoner_frames << ',' << row.episodes << ',' << row.mean_return << ','
        << row.mean_length << ',' << row.success_rate << ',' << row.actor_loss << ',' << row.critic_loss << ','
        << row.entropy << ',' << row.reasoner_loss;
    for (double p : row.proportions) out << ',' << p;
    out << '\n';
  }
}

void write_episodes_csv(std::ostream& out, const TrainReport& r) {
  out << "episode,frames,worker,return,length,success,died\n";
  out << std::setprecision(9);
  for (const auto& e : r.episodes) {
    out << e.index << ',' << e.frames << ',' << e.worker << ',' << e.ret << ',' << e.length << ','
        << int(e.success) << ',' << int(e.died) << '\n';
  }
}

void write_labels_csv(std::ostream& out, const TrainReport& r) {
  out << "label_events,reasoner_frames,cum_breakout,cum_self_improvement,cum_hovering,cum_prospect,"
         "pool_breakout,pool_self_improvement,pool_hovering,pool_prospect\n";
  out << std::setprecision(12);
  for (const auto& l : r.labels) {
    out << l.label_events << ',' << l.reasoner_frames;
    for (double p : l.cumulative) out << ',' << p;
    for (double p : l.pool) out << ',' << p;
    out << '\n';
  }
}

std::vector<LabelRow> read_labels_csv(std::istream& in) {
  std::vector<LabelRow> rows;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("label history is empty");
  if (line.rfind("label_events,", 0) != 0) throw FormatError("label history header not recognized");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw FormatError("label history line " + std::to_string(line_no) + " needs 10 columns");
    LabelRow r;
    try {
      r.label_events = std::stoull(cells[0]);
      r.reasoner_frames = std::stoull(cells[1]);
      for (std::size_t i = 0; i < kNumCategories; ++i) {
        r.cumulative[i] = std::stod(cells[2 + i]);
        r.pool[i] = std::stod(cells[6 + i]);
      }
    } catch (const std::logic_error&) {
      throw FormatError("label history line " + std::to_string(line_no) + " is not numeric");
    }
    rows.push_back(r);
  }
  return rows;
}

namespace {

struct A2CWorker {
  ScrollRunner env;
  std::mt19937_64 rng;
  std::uint64_t seed = 0;
  std::uint64_t episode = 0;
  double ret = 0.0;
};

struct IntervalStats {
  double ret = 0.0;
  double length = 0.0;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  A2CLoss loss;
  std::size_t updates = 0;
  double reasoner_loss = 0.0;
  std::size_t reasoner_updates = 0;
};

void write_outputs(const std::filesystem::path& dir, const HyperParams& hp, const TrainReport& report,
                   const ExploringPool& pool) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "report.csv");
    write_report_csv(f, report);
  }
  {
    std::ofstream f(dir / "episodes.csv");
    write_episodes_csv(f, report);
  }
  {
    std::ofstream f(dir / "labels.csv");
    write_labels_csv(f, report);
  }
  {
    std::ofstream f(dir / "pool.csv");
    pool.write_csv(f);
  }
  std::ofstream m(dir / "manifest.txt");
  m << "a2c_frames = " << report.a2c_frames << '\n'
    << "reasoner_frames = " << report.reasoner_frames << '\n'
    << "reasoner_updates = " << report.reasoner_updates << '\n'
    << "episodes = " << report.episodes.size() << '\n'
    << "seed = " << hp.seed << '\n'
    << "config_hash = " << std::hex << config_hash(hp) << std::dec << '\n';
  for (const auto& c : report.checkpoints) {
    m << "checkpoint = " << c.dir.filename().string() << ' ' << c.frames << ' ' << c.success_rate << '\n';
  }
}

std::string checkpoint_name(std::uint64_t frames) {
  std::ostringstream os;
  os << "ckpt_" << std::setw(10) << std::setfill('0') << frames;
  return os.str();
}

}  // namespace

TrainOutputs train(const HyperParams& hp, const TrainOptions& options) {
  hp.validate();
  const WorldSpec world = training_world(hp);
  const NetConfig nc = hp.net_config();
  TrainOutputs out{PolicyValueNet(nc, mix_seed(hp.seed, 1)), ReasonerNet(nc, mix_seed(hp.seed, 2)), {}};
  PolicyValueNet& policy = out.policy;
  ReasonerNet& reasoner = out.reasoner;
  TrainReport& report = out.report;

  Optimizer a2c_opt(policy.params(), {hp.optimizer, static_cast<float>(hp.lr_a2c)});
  Optimizer reasoner_opt(reasoner.params(), {hp.optimizer, static_cast<float>(hp.lr_reasoner)});

  std::vector<A2CWorker> workers;
  workers.reserve(hp.a2c_workers);
  for (std::size_t w = 0; w < hp.a2c_workers; ++w) {
    const std::uint64_t s = mix_seed(hp.seed, 100 + w);
    workers.push_back(A2CWorker{ScrollRunner(world, nc.stack), std::mt19937_64(s), s});
    workers.back().env.reset(mix_seed(s, 0));
  }
  ExploringPool pool(hp.pool_capacity, mix_seed(hp.seed, 3));
  std::vector<ReasonerCollector> collectors;
  collectors.reserve(hp.reasoner_workers);
  for (std::size_t r = 0; r < hp.reasoner_workers; ++r) collectors.emplace_back(world, nc, mix_seed(hp.seed, 200 + r));
  std::vector<ReasonerSample> ring;
  std::size_t ring_next = 0;
  std::mt19937_64 ring_rng(mix_seed(hp.seed, 4));

  const auto reasoner_start =
      static_cast<std::uint64_t>(std::ceil(hp.reasoner_start_fraction * static_cast<double>(hp.total_a2c_frames)));
  std::array<std::uint64_t, kNumCategories> label_counts{};
  std::uint64_t label_events = 0;
  std::deque<bool> recent;
  double recent_successes = 0.0;
  auto recent_rate = [&] { return recent.empty() ? 0.0 : recent_successes / static_cast<double>(recent.size()); };
  auto cumulative = [&] {
    std::array<double, kNumCategories> p{};
    if (label_events == 0) return p;
    for (std::size_t i = 0; i < kNumCategories; ++i) {
      p[i] = static_cast<double>(label_counts[i]) / static_cast<double>(label_events);
    }
    return p;
  };

  IntervalStats interval;
  std::uint64_t& frames = report.a2c_frames;
  std::uint64_t& reasoner_frames = report.reasoner_frames;
  std::uint64_t next_report = hp.report_interval;
  std::uint64_t next_reasoner_report = hp.report_interval;
  std::uint64_t next_checkpoint = hp.checkpoint_interval;

  auto emit_report = [&] {
    ReportRow row;
    row.frames = frames;
    row.reasoner_frames = reasoner_frames;
    row.episodes = report.episodes.size();
    if (interval.episodes > 0) {
      row.mean_return = interval.ret / static_cast<double>(interval.episodes);
      row.mean_length = interval.length / static_cast<double>(interval.episodes);
      row.success_rate = static_cast<double>(interval.successes) / static_cast<double>(interval.episodes);
    }
    if (interval.updates > 0) {
      const double k = static_cast<double>(interval.updates);
      row.actor_loss = interval.loss.actor / k;
      row.critic_loss = interval.loss.critic / k;
      row.entropy = interval.loss.entropy / k;
    }
    if (interval.reasoner_updates > 0) {
      row.reasoner_loss = interval.reasoner_loss / static_cast<double>(interval.reasoner_updates);
    }
    row.proportions = cumulative();
    report.rows.push_back(row);
    interval = {};
    if (options.on_report) options.on_report(row);
    write_outputs(options.out_dir, hp, report, pool);
  };
  auto save = [&](const std::string& name) {
    if (options.out_dir.empty()) return;
    const auto dir = options.out_dir / "checkpoints" / name;
    write_checkpoint_dir(dir, policy, reasoner, hp, frames, recent_rate());
    report.checkpoints.push_back({frames, recent_rate(), dir});
  };

  std::vector<Transition> batch;
  std::vector<std::size_t> pending;  // transitions awaiting v_next, one per worker
  std::vector<const FrameStack*> obs(workers.size());

  auto a2c_round = [&] {
    batch.clear();
    pending.assign(workers.size(), SIZE_MAX);
    for (std::size_t k = 0; k < hp.batch_size; ++k) {
      for (std::size_t w = 0; w < workers.size(); ++w) obs[w] = &workers[w].env.observation();
      const auto evals = policy.evaluate_batch(stack_batch(obs), workers.size());
      for (std::size_t w = 0; w < workers.size(); ++w) {
        if (pending[w] != SIZE_MAX) batch[pending[w]].v_next = evals[w].value;
        A2CWorker& wk = workers[w];
        Transition t;
        t.s_t = wk.env.observation();
        t.v_t = evals[w].value;
        const auto& probs = evals[w].policy.probs;
        t.a_t = sample_action(probs, wk.rng);
        t.log_prob = std::log(std::max(probs[static_cast<std::size_t>(t.a_t)], 1e-30f));
        t.entropy = static_cast<float>(policy_entropy(probs));
        const StepResult step = wk.env.step(t.a_t);
        t.r_t = static_cast<float>(hp.learner_reward(step.reward));
        t.done = step.done;
        t.s_next = wk.env.observation();
        wk.ret += step.reward;
        ++frames;
        if (step.done) {
          EpisodeRow e{report.episodes.size(), frames, w, wk.ret, wk.env.state().steps, step.reached_goal, step.died};
          report.episodes.push_back(e);
          interval.ret += e.ret;
          interval.length += static_cast<double>(e.length);
          ++interval.episodes;
          interval.successes += e.success ? 1 : 0;
          recent.push_back(e.success);
          recent_successes += e.success ? 1.0 : 0.0;
          if (recent.size() > kSuccessWindow) {
            recent_successes -= recent.front() ? 1.0 : 0.0;
            recent.pop_front();
          }
          wk.ret = 0.0;
          wk.env.reset(mix_seed(wk.seed, ++wk.episode));
          pending[w] = SIZE_MAX;
        } else {
          pending[w] = batch.size();
        }
        batch.push_back(std::move(t));
      }
    }
    bool any_pending = false;
    for (std::size_t w = 0; w < workers.size(); ++w) {
      obs[w] = &workers[w].env.observation();
      any_pending = any_pending || pending[w] != SIZE_MAX;
    }
    if (any_pending) {
      const auto evals = policy.evaluate_batch(stack_batch(obs), workers.size());
      for (std::size_t w = 0; w < workers.size(); ++w) {
        if (pending[w] != SIZE_MAX) batch[pending[w]].v_next = evals[w].value;
      }
    }
    const A2CLoss loss = a2c_update(policy, a2c_opt, batch, hp);
    interval.loss.actor += loss.actor;
    interval.loss.critic += loss.critic;
    interval.loss.entropy += loss.entropy;
    ++interval.updates;
  };

  std::vector<ReasonerSample> rbatch;
  std::vector<std::size_t> all_indices;
  std::vector<std::size_t> picked;
  auto reasoner_round = [&] {
    for (auto& collector : collectors) {
      for (std::size_t k = 0; k < hp.batch_size && reasoner_frames < hp.total_reasoner_frames; ++k) {
        CollectStep step = reasoner_collect_step(collector, policy, pool, hp);
        ++reasoner_frames;
        ++label_events;
        ++label_counts[static_cast<std::size_t>(step.sample.label)];
        if (label_events % hp.label_history_interval == 0) {
          const auto entries = pool.entries();
          std::vector<PurposeLabel> labels;
          labels.reserve(entries.size());
          for (const auto& e : entries) labels.push_back(e.label);
          report.labels.push_back({label_events, reasoner_frames, cumulative(), label_proportions(labels)});
        }
        if (step.entry.warmup) continue;
        if (ring.size() < hp.pool_capacity) {
          ring.push_back(std::move(step.sample));
        } else {
          ring[ring_next] = std::move(step.sample);
          ring_next = (ring_next + 1) % hp.pool_capacity;
        }
      }
      if (ring.size() < hp.batch_size) continue;
      all_indices.resize(ring.size());
      for (std::size_t i = 0; i < ring.size(); ++i) all_indices[i] = i;
      picked.clear();
      std::sample(all_indices.begin(), all_indices.end(), std::back_inserter(picked), hp.batch_size, ring_rng);
      rbatch.clear();
      for (std::size_t i : picked) rbatch.push_back(ring[i]);
      interval.reasoner_loss += reasoner_update(reasoner, reasoner_opt, rbatch, hp);
      ++interval.reasoner_updates;
      ++report.reasoner_updates;
    }
  };

  try {
    while (frames < hp.total_a2c_frames || reasoner_frames < hp.total_reasoner_frames) {
      const bool a2c_active = frames < hp.total_a2c_frames;
      if (a2c_active) a2c_round();
      if (frames >= reasoner_start && reasoner_frames < hp.total_reasoner_frames) reasoner_round();
      if (a2c_active) {
        if (frames >= next_report) {
          emit_report();
          while (next_report <= frames) next_report += hp.report_interval;
        }
        if (hp.checkpoint_interval > 0 && frames >= next_checkpoint) {
          save(checkpoint_name(frames));
          while (next_checkpoint <= frames) next_checkpoint += hp.checkpoint_interval;
        }
        if (frames >= hp.total_a2c_frames) next_reasoner_report = reasoner_frames + hp.report_interval;
      } else if (reasoner_frames >= next_reasoner_report) {
        emit_report();
        next_reasoner_report += hp.report_interval;
      }
    }
  } catch (const NumericalError&) {
    save("ckpt_lastgood");
    write_outputs(options.out_dir, hp, report, pool);
    throw;
  }
  emit_report();
  save("final");
  write_outputs(options.out_dir, hp, report, pool);
  return out;
}

}  // namespace a2cr
