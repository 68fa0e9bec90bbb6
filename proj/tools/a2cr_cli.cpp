// a2cr: train, explain, saliency, sweep, convergence and sim-theorem commands.
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical or tolerance failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "a2cr/config.hpp"
#include "a2cr/error.hpp"
#include "a2cr/explain.hpp"
#include "a2cr/training.hpp"

namespace fs = std::filesystem;
using namespace a2cr;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumerical = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OutputArgs {
  std::string out;
  bool force = false;
};

void add_output_flags(CLI::App* cmd, OutputArgs& o) {
  cmd->add_option("--out", o.out, "Run directory (default: $A2CR_OUTPUT_ROOT/<command>-seed<seed>, root 'runs')");
  cmd->add_flag("--force", o.force, "Replace an existing run directory");
}

fs::path prepare_output(const OutputArgs& o, const std::string& command, std::uint64_t seed) {
  fs::path dir;
  if (!o.out.empty()) {
    dir = o.out;
  } else {
    const char* root = std::getenv("A2CR_OUTPUT_ROOT");
    dir = fs::path(root && *root ? root : "runs") / (command + "-seed" + std::to_string(seed));
  }
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!o.force) throw UsageError("output directory " + dir.string() + " exists; pass --force to replace it");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw UsageError("cannot write " + path.string());
  f << std::setprecision(9);
  return f;
}

HyperParams checkpoint_config(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("checkpoint directory " + dir.string() + " does not exist");
  const fs::path cfg = dir / "config.txt";
  return fs::exists(cfg) ? load_config(cfg.string()) : HyperParams{};
}

struct LoadedModel {
  HyperParams hp;
  PolicyValueNet policy;
  ReasonerNet reasoner;
  WorldSpec world;
};

LoadedModel load_model(const fs::path& dir) {
  const HyperParams hp = checkpoint_config(dir);
  LoadedModel m{hp, PolicyValueNet(hp.net_config(), 0), ReasonerNet(hp.net_config(), 0), training_world(hp)};
  load_checkpoint_dir(dir, m.policy, m.reasoner);
  return m;
}

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::map<std::string, std::string> overrides;
  OutputArgs output;
  bool quiet = false;
};

void setup_train(CLI::App& app, TrainArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("train", "Train the policy/value network and the Reasoner");
  cmd->add_option("--config", a.config, "Config file of `key = value` lines, `#` comments");
  add_output_flags(cmd, a.output);
  cmd->add_flag("--quiet", a.quiet, "No progress lines on stderr");
  for (const auto& key : config_keys()) {
    std::string names = "--" + key;
    if (dashed(key) != key) names += ",--" + dashed(key);
    if (key == "total_a2c_frames") names += ",--total-frames";
    if (key == "a2c_workers") names += ",--workers";
    cmd->add_option_function<std::string>(
           names, [&a, key](const std::string& v) { a.overrides[key] = v; }, "Override " + key)
        ->group("Config overrides");
  }
  cmd->footer(
      "Outputs in the run directory:\n"
      "  config.txt     resolved configuration\n"
      "  report.csv     frames,reasoner_frames,episodes,mean_return,mean_length,success_rate,actor_loss,\n"
      "                 critic_loss,entropy,reasoner_loss,p_breakout,p_self_improvement,p_hovering,p_prospect\n"
      "  episodes.csv   episode,frames,worker,return,length,success,died\n"
      "  labels.csv     label_events,reasoner_frames,cum_breakout,cum_self_improvement,cum_hovering,\n"
      "                 cum_prospect,pool_breakout,pool_self_improvement,pool_hovering,pool_prospect\n"
      "  pool.csv       insert_index,g,se,g_bit,se_bit,category\n"
      "  checkpoints/   ckpt_<frames>/ and final/, each with policy_value.a2cr, reasoner.a2cr,\n"
      "                 manifest.txt and config.txt");
  cmd->callback([&a, &run] {
    run = [&a] {
      HyperParams hp;
      if (!a.config.empty()) hp = load_config(a.config);
      for (const auto& [k, v] : a.overrides) set_config_value(hp, k, v);
      hp.validate();
      const fs::path dir = prepare_output(a.output, "train", hp.seed);
      std::ofstream(dir / "config.txt") << serialize_config(hp);
      TrainOptions opt;
      opt.out_dir = dir;
      if (!a.quiet) {
        opt.on_report = [](const ReportRow& r) {
          std::cerr << "frames=" << r.frames << " reasoner_frames=" << r.reasoner_frames << " episodes=" << r.episodes
                    << " success=" << r.success_rate << " return=" << r.mean_return << " entropy=" << r.entropy
                    << '\n';
        };
      }
      const auto out = train(hp, opt);
      const auto& rows = out.report.rows;
      std::cout << "run directory: " << dir.string() << '\n'
                << "a2c frames: " << out.report.a2c_frames << '\n'
                << "reasoner frames: " << out.report.reasoner_frames << '\n'
                << "episodes: " << out.report.episodes.size() << '\n';
      if (!rows.empty()) std::cout << "final success rate: " << rows.back().success_rate << '\n';
      return kOk;
    };
  });
}

// ---------------------------------------------------------------------------

struct ExplainArgs {
  std::string checkpoint;
  std::size_t episodes = 10;
  std::uint64_t seed = 0;
  int perturb = 0;
  std::size_t window = 16;
  std::size_t tail = 64;
  double threshold = 0.5;
  OutputArgs output;
};

double mean_tail_instability(const std::vector<Category>& predicted, std::size_t tail, std::size_t window) {
  const std::size_t n = std::min(tail, predicted.size());
  if (n < window) return 0.0;
  const auto scores = instability(std::span<const Category>(predicted).last(n), window);
  double s = 0.0;
  for (double v : scores) s += v;
  return s / static_cast<double>(scores.size());
}

void setup_explain(CLI::App& app, ExplainArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("explain", "Roll out episodes and classify the purpose of every action");
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
  cmd->add_option("--episodes", a.episodes, "Number of episodes")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "Episode seed base");
  cmd->add_option("--perturb", a.perturb, "Entropy perturbation level k")->check(CLI::NonNegativeNumber);
  cmd->add_option("--window", a.window, "Instability window")->check(CLI::Range(2, 1 << 20));
  cmd->add_option("--tail", a.tail, "Pre-terminal steps scored per episode")->check(CLI::PositiveNumber);
  cmd->add_option("--threshold", a.threshold, "Switch rate that raises the pre-failure flag");
  add_output_flags(cmd, a.output);
  cmd->footer(
      "Outputs:\n"
      "  steps.csv        episode,step,action,reward,gain,se,label,predicted,instability\n"
      "  episodes.csv     episode,return,length,success,died,pre_terminal_instability,max_instability,pre_failure\n"
      "  proportions.csv  category,predicted,label");
  cmd->callback([&a, &run] {
    run = [&a] {
      const LoadedModel m = load_model(a.checkpoint);
      const fs::path dir = prepare_output(a.output, "explain", a.seed);
      ExploringPool pool(m.hp.pool_capacity, mix_seed(a.seed, 0x9001));
      RolloutOptions opt;
      opt.perturb_k = a.perturb;
      opt.window = a.window;
      opt.w1 = m.hp.w1;
      opt.reward_clip = m.hp.reward_clip;
      auto steps = open_csv(dir / "steps.csv");
      auto eps = open_csv(dir / "episodes.csv");
      steps << "episode,step,action,reward,gain,se,label,predicted,instability\n";
      eps << "episode,return,length,success,died,pre_terminal_instability,max_instability,pre_failure\n";
      std::vector<Category> all_pred;
      std::vector<Category> all_label;
      for (std::size_t e = 0; e < a.episodes; ++e) {
        const auto trace = rollout_episode(m.policy, m.reasoner, m.world, pool, mix_seed(a.seed, e), opt);
        std::vector<Category> pred;
        double max_inst = 0.0;
        const std::size_t tail_start = trace.steps.size() > a.tail ? trace.steps.size() - a.tail : 0;
        for (std::size_t t = 0; t < trace.steps.size(); ++t) {
          const auto& s = trace.steps[t];
          steps << e << ',' << t << ',' << action_name(s.action) << ',' << s.reward << ',' << s.gain << ',' << s.se
                << ',' << category_name(s.label) << ',' << category_name(s.predicted) << ',' << s.instability << '\n';
          pred.push_back(s.predicted);
          all_pred.push_back(s.predicted);
          all_label.push_back(s.label);
          if (t >= tail_start) max_inst = std::max(max_inst, s.instability);
        }
        eps << e << ',' << trace.ret << ',' << trace.steps.size() << ',' << int(trace.success) << ','
            << int(trace.died) << ',' << mean_tail_instability(pred, a.tail, a.window) << ',' << max_inst << ','
            << int(max_inst >= a.threshold) << '\n';
      }
      const auto pp = label_proportions(std::span<const Category>(all_pred));
      const auto lp = label_proportions(std::span<const Category>(all_label));
      auto props = open_csv(dir / "proportions.csv");
      props << "category,predicted,label\n";
      for (std::size_t i = 0; i < kNumCategories; ++i) {
        props << category_name(static_cast<Category>(i)) << ',' << pp[i] << ',' << lp[i] << '\n';
      }
      std::cout << "run directory: " << dir.string() << '\n' << "steps: " << all_pred.size() << '\n';
      return kOk;
    };
  });
}

// ---------------------------------------------------------------------------

struct SaliencyArgs {
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::vector<std::size_t> steps;
  std::vector<std::string> methods{"gradcam", "jacobian"};
  OutputArgs output;
};

struct RecordedStep {
  std::vector<float> state;
  std::vector<float> delta;
  int action = 0;
};

std::vector<RecordedStep> record_episode(const LoadedModel& m, std::uint64_t seed) {
  ScrollRunner env(m.world, m.policy.config().stack);
  env.reset(seed);
  std::mt19937_64 rng(mix_seed(seed, 0xAC7));
  std::vector<RecordedStep> out;
  while (true) {
    const FrameStack before = env.observation();
    RecordedStep r;
    r.state.assign(before.data().begin(), before.data().end());
    r.action = sample_action(m.policy.evaluate(before.data()).policy.probs, rng);
    const StepResult step = env.step(r.action);
    const auto after = env.observation().data();
    r.delta.resize(after.size());
    for (std::size_t i = 0; i < after.size(); ++i) r.delta[i] = after[i] - r.state[i];
    out.push_back(std::move(r));
    if (step.done) return out;
  }
}

void setup_saliency(CLI::App& app, SaliencyArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("saliency", "Export purpose-conditioned GradCAM and Jacobian maps as PGM");
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
  cmd->add_option("--seed,--episode-seed", a.seed, "Episode seed");
  cmd->add_option("--steps", a.steps, "Comma-separated step indices")->required()->delimiter(',');
  cmd->add_option("--methods", a.methods, "gradcam, jacobian or both")
      ->delimiter(',')
      ->check(CLI::IsMember({"gradcam", "jacobian"}));
  add_output_flags(cmd, a.output);
  cmd->footer(
      "Outputs:\n"
      "  index.csv  episode,step,category,method,file,predicted,action\n"
      "  step<NNNN>_gradcam_<category>.pgm (four per step), step<NNNN>_jacobian.pgm (one per step)");
  cmd->callback([&a, &run] {
    run = [&a] {
      const LoadedModel m = load_model(a.checkpoint);
      const auto episode = record_episode(m, a.seed);
      for (std::size_t s : a.steps) {
        if (s >= episode.size()) {
          throw UsageError("step " + std::to_string(s) + " is beyond the episode length " +
                           std::to_string(episode.size()));
        }
      }
      const bool want_cam = std::find(a.methods.begin(), a.methods.end(), "gradcam") != a.methods.end();
      const bool want_jac = std::find(a.methods.begin(), a.methods.end(), "jacobian") != a.methods.end();
      const fs::path dir = prepare_output(a.output, "saliency", a.seed);
      auto index = open_csv(dir / "index.csv");
      index << "episode,step,category,method,file,predicted,action\n";
      const auto& nc = m.policy.config();
      for (std::size_t s : a.steps) {
        const auto& r = episode[s];
        const Category predicted = classify(m.reasoner, r.delta).category;
        char stem[32];
        std::snprintf(stem, sizeof stem, "step%04zu", s);
        if (want_cam) {
          const auto maps = gradcam_all(m.reasoner, r.delta);
          for (const auto& map : maps) {
            const std::string file = std::string(stem) + "_gradcam_" + std::string(category_name(map.category)) + ".pgm";
            write_pgm(dir / file, map.values, map.width, map.height);
            index << a.seed << ',' << s << ',' << category_name(map.category) << ",gradcam," << file << ','
                  << int(map.category == predicted) << ',' << action_name(r.action) << '\n';
          }
        }
        if (want_jac) {
          const auto map = jacobian_saliency(m.policy, r.state, r.action);
          const std::string file = std::string(stem) + "_jacobian.pgm";
          write_pgm(dir / file, map.values, nc.width, nc.height);
          index << a.seed << ',' << s << ',' << category_name(predicted) << ",jacobian," << file << ",0,"
                << action_name(r.action) << '\n';
        }
      }
      std::cout << "run directory: " << dir.string() << '\n';
      return kOk;
    };
  });
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string checkpoint;
  int k_max = 19;
  std::size_t episodes_per_k = 30;
  std::uint64_t seed = 0;
  bool require_trend = false;
  OutputArgs output;
};

void setup_sweep(CLI::App& app, SweepArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("sweep", "Category proportions under increasing policy entropy");
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
  cmd->add_option("--k-max", a.k_max, "Largest perturbation level")->check(CLI::NonNegativeNumber);
  cmd->add_option("--episodes-per-k", a.episodes_per_k, "Episodes per level")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "Episode seed base");
  cmd->add_flag("--require-trend", a.require_trend,
                "Exit 2 unless Spearman(k, Breakout) < -0.5 and Spearman(k, Hovering) > 0.5");
  add_output_flags(cmd, a.output);
  cmd->footer(
      "Outputs:\n"
      "  sweep.csv     k,category,mean,std   ((k_max+1)*4 rows)\n"
      "  spearman.csv  category,spearman");
  cmd->callback([&a, &run] {
    run = [&a] {
      const LoadedModel m = load_model(a.checkpoint);
      const fs::path dir = prepare_output(a.output, "sweep", a.seed);
      const auto result = entropy_sweep(m.policy, m.reasoner, m.world, a.k_max, a.episodes_per_k, a.seed);
      auto csv = open_csv(dir / "sweep.csv");
      csv << "k,category,mean,std\n";
      std::vector<double> ks;
      std::array<std::vector<double>, kNumCategories> series;
      for (const auto& row : result.rows) {
        ks.push_back(row.k);
        for (std::size_t i = 0; i < kNumCategories; ++i) {
          csv << row.k << ',' << category_name(static_cast<Category>(i)) << ',' << row.mean[i] << ','
              << row.stddev[i] << '\n';
          series[i].push_back(row.mean[i]);
        }
      }
      auto rho_csv = open_csv(dir / "spearman.csv");
      rho_csv << "category,spearman\n";
      std::array<double, kNumCategories> rho{};
      for (std::size_t i = 0; i < kNumCategories; ++i) {
        rho[i] = ks.size() > 1 ? spearman(ks, series[i]) : 0.0;
        rho_csv << category_name(static_cast<Category>(i)) << ',' << rho[i] << '\n';
        std::cout << "spearman(k, " << category_name(static_cast<Category>(i)) << ") = " << rho[i] << '\n';
      }
      if (a.require_trend) {
        const bool ok = rho[static_cast<int>(Category::Breakout)] < -0.5 &&
                        rho[static_cast<int>(Category::Hovering)] > 0.5;
        if (!ok) {
          std::cerr << "entropy trend not reproduced\n";
          return kNumerical;
        }
      }
      return kOk;
    };
  });
}

// ---------------------------------------------------------------------------

struct ConvergenceArgs {
  std::string history;
  std::size_t window = 0;
  double window_fraction = 0.2;
  double epsilon = 0.05;
  std::string column = "cumulative";
  std::uint64_t seed = 0;
  OutputArgs output;
};

void setup_convergence(CLI::App& app, ConvergenceArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("convergence", "Check that label proportions settle");
  cmd->add_option("--history", a.history, "labels.csv written by train")->required();
  cmd->add_option("--window", a.window, "Trailing rows checked (0: use --window-fraction)");
  cmd->add_option("--window-fraction", a.window_fraction, "Trailing fraction of rows checked")
      ->check(CLI::Range(0.0, 0.5));
  cmd->add_option("--epsilon", a.epsilon, "Maximum max-min spread inside the window");
  cmd->add_option("--column", a.column, "cumulative or pool")->check(CLI::IsMember({"cumulative", "pool"}));
  cmd->add_option("--seed", a.seed, "Only names the default run directory");
  add_output_flags(cmd, a.output);
  cmd->footer(
      "Outputs:\n"
      "  convergence.csv  step,p_breakout,p_self_improvement,p_hovering,p_prospect\n"
      "  summary.csv      category,converged,spread,final\n"
      "Exit 2 when any category has not converged.");
  cmd->callback([&a, &run] {
    run = [&a] {
      std::ifstream in(a.history);
      if (!in) throw UsageError("cannot open history file " + a.history);
      const auto rows = read_labels_csv(in);
      std::vector<std::array<double, kNumCategories>> hist;
      for (const auto& r : rows) hist.push_back(a.column == "pool" ? r.pool : r.cumulative);
      std::size_t window = a.window;
      if (window == 0) window = std::max<std::size_t>(2, static_cast<std::size_t>(a.window_fraction * hist.size()));
      const auto result = convergence(hist, window, a.epsilon);
      const fs::path dir = prepare_output(a.output, "convergence", a.seed);
      auto csv = open_csv(dir / "convergence.csv");
      csv << "step,p_breakout,p_self_improvement,p_hovering,p_prospect\n";
      for (std::size_t i = 0; i < rows.size(); ++i) {
        csv << rows[i].label_events;
        for (double p : hist[i]) csv << ',' << p;
        csv << '\n';
      }
      auto sum = open_csv(dir / "summary.csv");
      sum << "category,converged,spread,final\n";
      for (std::size_t i = 0; i < kNumCategories; ++i) {
        sum << category_name(static_cast<Category>(i)) << ',' << int(result.converged[i]) << ','
            << result.spread[i] << ',' << result.final_value[i] << '\n';
        std::cout << category_name(static_cast<Category>(i)) << ": spread " << result.spread[i]
                  << (result.converged[i] ? " converged" : " not converged") << '\n';
      }
      return result.complete ? kOk : kNumerical;
    };
  });
}

// ---------------------------------------------------------------------------

struct TheoremArgs {
  std::vector<std::string> features{"normal:5:2"};
  std::size_t capacity = 1000;
  std::size_t events = 50000;
  double tolerance = 0.02;
  std::uint64_t seed = 0;
  OutputArgs output;
};

void setup_theorem(CLI::App& app, TheoremArgs& a, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("sim-theorem", "Monte-Carlo check of the label-frequency limit");
  cmd->add_option("--feature", a.features, "normal:MEAN:SD, exponential:RATE or uniform:LO:HI; give one or two")
      ->expected(1, 2);
  cmd->add_option("--capacity", a.capacity, "Pool capacity")->check(CLI::PositiveNumber);
  cmd->add_option("--events", a.events, "Labeled draws after the prefill")->check(CLI::PositiveNumber);
  cmd->add_option("--tolerance", a.tolerance, "Largest accepted absolute error");
  cmd->add_option("--seed", a.seed, "Random seed");
  add_output_flags(cmd, a.output);
  cmd->footer(
      "Outputs:\n"
      "  theorem.csv  n,category,empirical,analytic,abs_error\n"
      "Exit 2 when the largest absolute error exceeds --tolerance.");
  cmd->callback([&a, &run] {
    run = [&a] {
      TheoremSimSpec spec;
      for (const auto& f : a.features) spec.features.push_back(parse_feature_spec(f));
      spec.capacity = a.capacity;
      spec.events = a.events;
      spec.seed = a.seed;
      const auto r = simulate_theorem(spec);
      const fs::path dir = prepare_output(a.output, "sim-theorem", a.seed);
      auto csv = open_csv(dir / "theorem.csv");
      csv << "n,category,empirical,analytic,abs_error\n";
      for (std::size_t i = 0; i < r.empirical.size(); ++i) {
        const std::string name =
            r.dims == 1 ? std::string("label1") : std::string(category_name(static_cast<Category>(i)));
        csv << a.events << ',' << name << ',' << r.empirical[i] << ',' << r.analytic[i] << ',' << r.abs_error[i]
            << '\n';
        std::cout << name << ": empirical " << r.empirical[i] << " analytic " << r.analytic[i] << '\n';
      }
      std::cout << "max abs error " << r.max_abs_error << " (tolerance " << a.tolerance << ")\n";
      return r.max_abs_error <= a.tolerance ? kOk : kNumerical;
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Advantage actor-critic with a purpose Reasoner on a pixel side-scroller"};
  app.require_subcommand(1);
  app.footer("Environment: A2CR_OUTPUT_ROOT sets the default output root (default 'runs').\n"
             "Exit codes: 0 success, 1 usage or configuration error, 2 numerical or tolerance failure.");

  std::function<int()> run;
  TrainArgs train_args;
  ExplainArgs explain_args;
  SaliencyArgs saliency_args;
  SweepArgs sweep_args;
  ConvergenceArgs convergence_args;
  TheoremArgs theorem_args;
  setup_train(app, train_args, run);
  setup_explain(app, explain_args, run);
  setup_saliency(app, saliency_args, run);
  setup_sweep(app, sweep_args, run);
  setup_convergence(app, convergence_args, run);
  setup_theorem(app, theorem_args, run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    return run ? run() : kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
