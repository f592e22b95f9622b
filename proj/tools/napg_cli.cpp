// napg command-line tool: gen-data, train, eval, exec, bench.
//
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
// --seed always overrides the seed stored in a spec or config file.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <json.hpp>

#include "napg/bench.hpp"
#include "napg/log.hpp"
#include "napg/synth.hpp"
#include "napg/training.hpp"

namespace {

using napg::ConfigError;
using nlohmann::json;

/// Runtime failure (exit 1), as opposed to ConfigError (exit 2).
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is not set");
  if (!std::filesystem::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

std::vector<napg::Example> load_dataset(const std::string& path) {
  require_file(path, "dataset");
  try {
    return napg::load_examples(path);
  } catch (const napg::DatasetError& e) {
    throw ConfigError(e.what());
  }
}

napg::Model load_model(const std::string& path) {
  require_file(path, "checkpoint");
  try {
    return napg::Model::load(path);
  } catch (const napg::CheckpointError& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Writes a report to `out` (a file path) or stdout.
void emit(const json& report, const std::string& out) {
  if (out.empty()) {
    std::cout << report.dump(2) << '\n';
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot write " + out);
  f << report.dump(2) << '\n';
  if (!f) throw RuntimeFailure("write failed: " + out);
}

json histogram(const std::vector<napg::Example>& xs) {
  std::map<std::string, std::size_t> h;
  for (const auto& ex : xs) h[ex.is_span() ? "span" : std::to_string(ex.step_count)]++;
  return h;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::string out = "data";
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a) {
  napg::GenSpec spec;
  if (!a.config.empty()) {
    try {
      spec = napg::gen_spec_from_json(read_json_file(a.config));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    } catch (const json::exception& e) {
      throw ConfigError(a.config + ": " + e.what());
    }
  }
  if (a.seed) spec.seed = *a.seed;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const napg::Dataset ds = napg::generate_dataset(spec);
  std::filesystem::create_directories(a.out);
  const auto dir = std::filesystem::path(a.out);
  try {
    napg::save_examples((dir / "train.jsonl").string(), ds.train);
    napg::save_examples((dir / "dev.jsonl").string(), ds.dev);
    napg::save_examples((dir / "test.jsonl").string(), ds.test);
  } catch (const napg::DatasetError& e) {
    throw RuntimeFailure(e.what());
  }
  std::ofstream((dir / "spec.json").string()) << napg::to_json(spec).dump(2) << '\n';
  std::cout << json{{"out_dir", a.out},
                    {"seed", spec.seed},
                    {"train", {{"n", ds.train.size()}, {"steps", histogram(ds.train)}}},
                    {"dev", {{"n", ds.dev.size()}, {"steps", histogram(ds.dev)}}},
                    {"test", {{"n", ds.test.size()}, {"steps", histogram(ds.test)}}}}
                   .dump(2)
            << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  if (a.config.empty()) throw ConfigError("train needs --config");
  napg::RunConfig cfg = napg::run_config_from_json(read_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out.empty()) cfg.paths.out_dir = a.out;
  const auto train = load_dataset(cfg.paths.train);
  std::vector<napg::Example> dev;
  if (!cfg.paths.dev.empty()) dev = load_dataset(cfg.paths.dev);
  if (train.empty()) throw ConfigError("training set is empty");

  napg::Model model(cfg, napg::Vocab::build(train, cfg.n_max_steps));
  napg::TrainResult res;
  try {
    res = napg::train_model(model, train, dev);
  } catch (const napg::InputError& e) {
    throw ConfigError(e.what());
  } catch (const napg::TrainingError& e) {
    throw RuntimeFailure(e.what());
  }
  json epochs = json::array();
  for (const auto& e : res.epochs) epochs.push_back(napg::to_json(e));
  json report = {{"model", napg::decoder_name(cfg.model)},
                 {"seed", cfg.seed},
                 {"decoder_parameters", model.decoder_parameter_count()},
                 {"best_epoch", res.best_epoch},
                 {"stopped_on_budget", res.stopped_on_budget},
                 {"seconds", res.seconds},
                 {"epochs", epochs}};
  if (res.best_dev) report["best_dev"] = napg::to_json(*res.best_dev);
  if (!cfg.paths.out_dir.empty()) {
    report["checkpoint"] = (std::filesystem::path(cfg.paths.out_dir) / (dev.empty() ? "last.ckpt.json" : "best.ckpt.json")).string();
    std::ofstream(std::filesystem::path(cfg.paths.out_dir) / "config.json") << napg::to_json(cfg).dump(2) << '\n';
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string predictions;
  bool gold = false;
};

int cmd_eval(const EvalArgs& a) {
  const auto data = load_dataset(a.data);
  if (data.empty()) throw ConfigError("dataset is empty");
  std::vector<napg::PredictionRecord> preds;
  if (a.gold) {
    for (const auto& ex : data) preds.push_back(napg::gold_prediction(ex));
  } else {
    if (a.checkpoint.empty()) throw ConfigError("eval needs --checkpoint (or --gold)");
    const napg::Model model = load_model(a.checkpoint);
    for (const auto& ex : data) preds.push_back(model.predict(ex));
  }
  const napg::MetricsReport report = napg::score_all(data, preds);
  if (!a.predictions.empty()) {
    std::ofstream f(a.predictions, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + a.predictions);
    for (const auto& p : preds) f << napg::to_json(p).dump() << '\n';
  }
  emit(napg::to_json(report), a.out);
  return 0;
}

int cmd_exec(const std::string& text) {
  std::optional<napg::Program> program;
  try {
    program = napg::parse_program(text);
  } catch (const napg::ProgramError& e) {
    throw ConfigError(e.what());
  }
  try {
    std::cout << napg::format_answer(napg::execute(*program)) << '\n';
  } catch (const napg::ProgramError& e) {
    throw RuntimeFailure(e.what());
  }
  return 0;
}

struct BenchArgs {
  std::string napg_ckpt;
  std::string ar_ckpt;
  std::string data;
  std::string out;
  napg::BenchOptions opt;
};

int cmd_bench(const BenchArgs& a) {
  const auto data = load_dataset(a.data);
  const napg::Model fast = load_model(a.napg_ckpt);
  const napg::Model slow = load_model(a.ar_ckpt);
  if (fast.type() != napg::DecoderType::Napg) throw ConfigError(a.napg_ckpt + " is not a NAPG checkpoint");
  if (slow.type() != napg::DecoderType::Ar) throw ConfigError(a.ar_ckpt + " is not an AR checkpoint");
  if (!(fast.vocab() == slow.vocab())) throw ConfigError("checkpoints use different vocabularies");
  if (fast.config().n_max_steps != slow.config().n_max_steps) throw ConfigError("checkpoints use different n_max_steps");
  const napg::BenchReport r_napg = napg::bench_decoder(fast, data, a.opt);
  const napg::BenchReport r_ar = napg::bench_decoder(slow, data, a.opt);
  emit({{"napg", napg::to_json(r_napg)}, {"ar", napg::to_json(r_ar)}, {"speedup", napg::speedup(r_napg, r_ar)}}, a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-autoregressive program generation: data, training, evaluation and benchmarks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "napg 0.1.0");

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic train/dev/test dataset");
  g->add_option("--config", gen.config, "Generation spec (JSON); defaults apply when omitted");
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();
  g->add_option("--seed", gen.seed, "Overrides the spec seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model from a run config");
  t->add_option("--config", tr.config, "Run config (JSON)")->required();
  t->add_option("--out", tr.out, "Output directory; overrides paths.out_dir");
  t->add_option("--seed", tr.seed, "Overrides the config seed");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint (or the gold annotations) on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
  e->add_option("--data", ev.data, "Dataset (JSON lines)")->required();
  e->add_option("--out", ev.out, "Write the report here instead of stdout");
  e->add_option("--predictions", ev.predictions, "Also write per-example predictions (JSON lines)");
  e->add_flag("--gold", ev.gold, "Use the gold annotations as predictions");
  std::optional<std::uint64_t> unused_seed;
  std::string unused_config;
  e->add_option("--seed", unused_seed, "Accepted for uniformity; evaluation is deterministic");
  e->add_option("--config", unused_config, "Accepted for uniformity; the checkpoint carries its config");

  std::string program_text;
  auto* x = app.add_subcommand("exec", "Execute one program and print its answer");
  x->add_option("program", program_text, "Program text, e.g. \"add(1,2), divide(#0,2)\"")->required();

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Decode-only speed comparison of a NAPG and an AR checkpoint");
  b->add_option("--napg", be.napg_ckpt, "NAPG checkpoint")->required();
  b->add_option("--ar", be.ar_ckpt, "AR checkpoint")->required();
  b->add_option("--data", be.data, "Dataset (JSON lines)")->required();
  b->add_option("--repeats", be.opt.repeats, "Timed passes over the data")->capture_default_str()->check(CLI::PositiveNumber);
  b->add_option("--warmup", be.opt.warmup, "Untimed decodes before measuring")->capture_default_str();
  b->add_option("--max-examples", be.opt.max_examples, "Use at most this many examples (0 = all)")->capture_default_str();
  b->add_option("--out", be.out, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*x) return cmd_exec(program_text);
    if (*b) return cmd_bench(be);
  } catch (const ConfigError& err) {
    napg::log::error(err.what());
    return 2;
  } catch (const RuntimeFailure& err) {
    napg::log::error(err.what());
    return 1;
  } catch (const std::exception& err) {
    napg::log::error(err.what());
    return 1;
  }
  return 2;
}
