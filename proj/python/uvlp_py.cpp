#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "uvlp/checkpoint.hpp"
#include "uvlp/data.hpp"
#include "uvlp/decode.hpp"
#include "uvlp/error.hpp"
#include "uvlp/gradcheck.hpp"
#include "uvlp/metrics.hpp"
#include "uvlp/training.hpp"

namespace py = pybind11;
using namespace uvlp;

namespace {

Vocab vocab_of(const Checkpoint& ck) {
  return Vocab(std::vector<std::string>(ck.vocab_tokens.begin() + special::kReservedCount, ck.vocab_tokens.end()));
}

// Scenes cross the boundary as the JSONL record strings used on disk.
std::vector<SceneExample> scenes_from(const std::vector<std::string>& lines) {
  std::vector<SceneExample> out;
  for (std::size_t i = 0; i < lines.size(); ++i) out.push_back(scene_from_json_line(lines[i], i + 1));
  return out;
}

TrainConfig config_from(const std::string& json_text, const std::vector<SceneExample>& scenes, const Vocab& vocab) {
  TrainConfig c;
  if (!json_text.empty()) nlohmann::json::parse(json_text).get_to(c);
  if (!scenes.empty() && !scenes.front().regions.empty()) {
    c.model.regions = scenes.front().regions.size();
    c.model.feature_dim = scenes.front().regions.front().features.size();
    c.model.num_classes = scenes.front().regions.front().class_probs.size();
  }
  c.model.vocab_size = vocab.size();
  return c;
}

class Model {
 public:
  explicit Model(Checkpoint ck) : ck_(std::move(ck)), vocab_(vocab_of(ck_)) {}
  static Model load(const std::string& path) { return Model(load_checkpoint(path)); }

  void save(const std::string& path) const { save_checkpoint(ck_, path); }
  std::string config_json() const { return nlohmann::json(ck_.config).dump(); }
  std::size_t step() const { return ck_.step; }
  const Checkpoint& checkpoint() const { return ck_; }

  std::pair<std::string, double> caption(const std::string& scene, std::size_t beam, bool greedy, std::size_t max_len,
                                         double alpha) const {
    const SceneExample s = scene_from_json_line(scene, 1);
    const std::size_t budget = max_len == 0 ? ck_.config.text_len : max_len;
    const Prediction p = greedy ? greedy_decode(s, ck_.weights, ck_.config, budget)
                                : beam_search(s, ck_.weights, ck_.config, beam, budget, alpha);
    return {detokenize(p.caption, vocab_), p.log_prob};
  }

  std::vector<std::pair<std::string, double>> answer(const std::string& scene, const std::string& question,
                                                     std::size_t topk) const {
    if (ck_.answers.empty()) throw ConfigError("checkpoint has no VQA answers");
    const SceneExample s = scene_from_json_line(scene, 1);
    const TokenizedText q = tokenize(question, vocab_, ck_.config.text_len);
    const std::vector<TokenId> ids(q.ids.begin(), q.ids.begin() + static_cast<std::ptrdiff_t>(q.length));
    const Prediction p = vqa_predict(s, ids, ck_.weights, ck_.config, ck_.answers, topk);
    std::vector<std::pair<std::string, double>> out;
    for (const auto& a : p.answers) out.emplace_back(vocab_.token(a.word), a.score);
    return out;
  }

 private:
  Checkpoint ck_;
  Vocab vocab_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Unified vision-language pre-training on synthetic scenes";

  // Translators run newest first, so the base class is registered first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);

  m.def("default_grammar_json", [] { return grammar_to_json(default_grammar()); });
  m.def("vocab_words", [] { return vocab_from_grammar(default_grammar()).tokens(); },
        "Every token of the built-in grammar's vocabulary, indexed by id.");
  m.def(
      "generate",
      [](std::uint64_t seed, std::size_t count, std::size_t regions, double noise, std::uint64_t first_id) {
        const SceneGenerator gen(default_grammar());
        std::vector<std::string> lines;
        for (const auto& s : generate_dataset(gen, seed, count, regions, noise, first_id)) {
          lines.push_back(scene_to_json_line(s));
        }
        return lines;
      },
      py::arg("seed"), py::arg("count"), py::arg("regions") = 8, py::arg("noise") = 0.1, py::arg("first_id") = 0);

  m.def(
      "pretrain",
      [](const std::vector<std::string>& scenes, const std::string& config_json) {
        const Vocab vocab = vocab_from_grammar(default_grammar());
        const auto data = scenes_from(scenes);
        const TrainConfig c = config_from(config_json, data, vocab);
        py::gil_scoped_release release;
        return Model(pretrain(data, c, vocab).checkpoint);
      },
      py::arg("scenes"), py::arg("config_json") = "");
  m.def(
      "finetune_caption",
      [](const std::vector<std::string>& scenes, const Model* init, const std::string& config_json) {
        const Vocab vocab = vocab_from_grammar(default_grammar());
        const auto data = scenes_from(scenes);
        TrainConfig c = config_from(config_json, data, vocab);
        if (init != nullptr) c.model = init->checkpoint().config;
        py::gil_scoped_release release;
        return Model(finetune_caption(data, init ? &init->checkpoint() : nullptr, c, vocab).checkpoint);
      },
      py::arg("scenes"), py::arg("init") = nullptr, py::arg("config_json") = "");

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load)
      .def("save", &Model::save)
      .def_property_readonly("config_json", &Model::config_json)
      .def_property_readonly("step", &Model::step)
      .def("caption", &Model::caption, py::arg("scene"), py::arg("beam") = 1, py::arg("greedy") = false,
           py::arg("max_len") = 0, py::arg("alpha") = 0.0)
      .def("answer", &Model::answer, py::arg("scene"), py::arg("question"), py::arg("topk") = 1);

  m.def("bleu4", &bleu4, py::arg("hypotheses"), py::arg("references"));
  m.def("qa_accuracy", &qa_accuracy, py::arg("predictions"), py::arg("soft_labels"));
  m.def(
      "grad_check",
      [](std::uint64_t seed, std::size_t batch) {
        const GradCheckReport r = full_model_grad_check(grad_check_config(), batch, seed);
        py::dict d;
        d["max_error"] = r.max_error;
        d["worst_tensor"] = r.worst_tensor;
        d["coordinates"] = r.coordinates;
        d["seconds"] = r.seconds;
        return d;
      },
      py::arg("seed") = 1, py::arg("batch") = 2);
}
