#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "a2cr/config.hpp"
#include "a2cr/error.hpp"
#include "a2cr/explain.hpp"
#include "a2cr/training.hpp"

namespace py = pybind11;
using namespace a2cr;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::span<const float> view(const FloatArray& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

// (H, W) frame -> (data, width, height).
std::tuple<std::span<const float>, std::size_t, std::size_t> frame_view(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D frame");
  return {view(a), static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0))};
}

FloatArray to_array(std::span<const float> v, std::vector<py::ssize_t> shape) {
  FloatArray out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

FloatArray stack_array(const FrameStack& s) {
  return to_array(s.data(), {static_cast<py::ssize_t>(s.depth()), static_cast<py::ssize_t>(s.height()),
                             static_cast<py::ssize_t>(s.width())});
}

}  // namespace

PYBIND11_MODULE(_a2cr, m) {
  m.doc() = "Advantage actor-critic with a purpose Reasoner";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  py::enum_<Category>(m, "Category")
      .value("Breakout", Category::Breakout)
      .value("SelfImprovement", Category::SelfImprovement)
      .value("Hovering", Category::Hovering)
      .value("Prospect", Category::Prospect);
  m.def("category_name", [](Category c) { return std::string(category_name(c)); });

  // Configuration ---------------------------------------------------------
  py::class_<HyperParams>(m, "HyperParams")
      .def(py::init<>())
      .def("get", [](const HyperParams& hp, const std::string& k) { return get_config_value(hp, k); })
      .def("set", [](HyperParams& hp, const std::string& k, const std::string& v) { set_config_value(hp, k, v); })
      .def("validate", &HyperParams::validate)
      .def("serialize", [](const HyperParams& hp) { return serialize_config(hp); })
      .def("hash", [](const HyperParams& hp) { return config_hash(hp); });
  m.def("config_keys", &config_keys);
  m.def("parse_config", [](const std::string& text) { return parse_config(text); });

  // Signal processing -----------------------------------------------------
  py::class_<ShiftEstimate>(m, "ShiftEstimate")
      .def_readonly("dx", &ShiftEstimate::dx)
      .def_readonly("dy", &ShiftEstimate::dy)
      .def_readonly("peak_value", &ShiftEstimate::peak_value)
      .def_readonly("low_confidence", &ShiftEstimate::low_confidence);
  m.def("estimate_shift", [](const FloatArray& prev, const FloatArray& next) {
    const auto [p, w, h] = frame_view(prev);
    const auto [n, w2, h2] = frame_view(next);
    if (w != w2 || h != h2) throw ShapeError("frames differ in shape");
    return estimate_shift(p, n, w, h);
  });

  py::class_<ExplorationBreakdown>(m, "ExplorationBreakdown")
      .def_readonly("common_diff", &ExplorationBreakdown::common_diff)
      .def_readonly("disappeared", &ExplorationBreakdown::disappeared)
      .def_readonly("appeared", &ExplorationBreakdown::appeared)
      .def_readonly("total", &ExplorationBreakdown::total);
  m.def("state_exploration", [](const FloatArray& prev, const FloatArray& next, int dx, int dy) {
    const auto [p, w, h] = frame_view(prev);
    const auto [n, w2, h2] = frame_view(next);
    if (w != w2 || h != h2) throw ShapeError("frames differ in shape");
    ShiftEstimate s;
    s.dx = dx;
    s.dy = dy;
    return state_exploration(p, n, w, h, s);
  });
  m.def("gain", [](double v_next, double v_prev, double reward, double w1) {
    return gain({v_next, v_prev, reward, w1});
  }, py::arg("v_next"), py::arg("v_prev"), py::arg("reward"), py::arg("w1") = 0.5);
  m.def("td_target", &td_target, py::arg("reward"), py::arg("v_next"), py::arg("done"), py::arg("gamma"));

  // Exploring pool --------------------------------------------------------
  py::class_<ExploringPool>(m, "ExploringPool")
      .def(py::init<std::size_t, std::uint64_t>(), py::arg("capacity") = 1000, py::arg("seed") = 0)
      .def("label_and_push",
           [](ExploringPool& p, double g, double se) { return p.label_and_push(g, se).label.category(); })
      .def("__len__", &ExploringPool::size)
      .def_property_readonly("capacity", &ExploringPool::capacity);
  m.def("label_proportions", [](const std::vector<Category>& c) { return label_proportions(std::span(c)); });
  m.def("bce_with_logits", [](const std::vector<float>& logits, Category target, bool positive_only) {
    return bce_with_logits(logits, target, positive_only ? BceMode::PositiveOnly : BceMode::Full);
  }, py::arg("logits"), py::arg("target"), py::arg("positive_only") = false);

  // Environment -----------------------------------------------------------
  py::class_<WorldSpec>(m, "WorldSpec")
      .def_readonly("length", &WorldSpec::length)
      .def_readonly("time_limit", &WorldSpec::time_limit)
      .def("to_tilemap", [](const WorldSpec& w) { return to_tilemap(w); });
  m.def("generate_world", &generate_world, py::arg("seed"), py::arg("length") = 80);
  m.def("parse_tilemap", [](const std::string& text) { return parse_tilemap(text); });

  py::class_<StepResult>(m, "StepResult")
      .def_readonly("reward", &StepResult::reward)
      .def_readonly("done", &StepResult::done)
      .def_readonly("died", &StepResult::died)
      .def_readonly("reached_goal", &StepResult::reached_goal)
      .def_readonly("world_x", &StepResult::world_x);
  py::class_<ScrollRunner>(m, "ScrollRunner")
      .def(py::init<WorldSpec, std::size_t>(), py::arg("world"), py::arg("stack_depth") = 3)
      .def("reset", [](ScrollRunner& e, std::uint64_t seed) { return stack_array(e.reset(seed)); })
      .def("step", &ScrollRunner::step)
      .def("observation", [](const ScrollRunner& e) { return stack_array(e.observation()); })
      .def("scripted_action", [](const ScrollRunner& e) { return scripted_runner_action(e); });
  m.attr("NUM_ACTIONS") = kNumActions;

  // Networks --------------------------------------------------------------
  py::class_<PolicyValueNet>(m, "PolicyValueNet")
      .def(py::init([](const HyperParams& hp, std::uint64_t seed) { return PolicyValueNet(hp.net_config(), seed); }),
           py::arg("hp") = HyperParams{}, py::arg("seed") = 0)
      .def("evaluate",
           [](const PolicyValueNet& n, const FloatArray& state) {
             const auto e = n.evaluate(view(state));
             return py::make_tuple(e.policy.probs, e.value);
           })
      .def("checksum", [](const PolicyValueNet& n) { return n.params().checksum(); });
  py::class_<ReasonerNet>(m, "ReasonerNet")
      .def(py::init([](const HyperParams& hp, std::uint64_t seed) { return ReasonerNet(hp.net_config(), seed); }),
           py::arg("hp") = HyperParams{}, py::arg("seed") = 0)
      .def("classify", [](const ReasonerNet& n, const FloatArray& delta) { return classify(n, view(delta)).category; })
      .def("gradcam", [](const ReasonerNet& n, const FloatArray& delta, int target) {
        const auto s = gradcam(n, view(delta), target);
        return to_array(s.values, {static_cast<py::ssize_t>(s.height), static_cast<py::ssize_t>(s.width)});
      });
  m.def("policy_entropy", [](const std::vector<float>& p) { return policy_entropy(p); });
  m.def("perturb_distribution", [](const std::vector<float>& p, int k) { return perturb_distribution(p, k); });

  // Training and analysis -------------------------------------------------
  m.def(
      "train",
      [](const HyperParams& hp, const std::string& out_dir) {
        TrainOptions opt;
        opt.out_dir = out_dir;
        auto out = [&] {
          py::gil_scoped_release release;
          return train(hp, opt);
        }();
        py::dict d;
        d["a2c_frames"] = out.report.a2c_frames;
        d["reasoner_frames"] = out.report.reasoner_frames;
        d["episodes"] = out.report.episodes.size();
        d["policy_checksum"] = out.policy.params().checksum();
        return d;
      },
      py::arg("hp"), py::arg("out_dir") = "");

  py::class_<TheoremSimResult>(m, "TheoremSimResult")
      .def_readonly("empirical", &TheoremSimResult::empirical)
      .def_readonly("analytic", &TheoremSimResult::analytic)
      .def_readonly("max_abs_error", &TheoremSimResult::max_abs_error);
  m.def(
      "simulate_theorem",
      [](const std::vector<std::string>& features, std::size_t capacity, std::size_t events, std::uint64_t seed) {
        TheoremSimSpec spec;
        for (const auto& f : features) spec.features.push_back(parse_feature_spec(f));
        spec.capacity = capacity;
        spec.events = events;
        spec.seed = seed;
        return simulate_theorem(spec);
      },
      py::arg("features"), py::arg("capacity") = 1000, py::arg("events") = 50000, py::arg("seed") = 0);
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return spearman(x, y); });
  m.def("instability", [](const std::vector<Category>& c, std::size_t window) { return instability(c, window); });
}
