#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "octoforce/errors.hpp"
#include "octoforce/parallel.hpp"

namespace octoforce::cli {

namespace fs = std::filesystem;

namespace {

Json eval_json(const EvalOptions& e) {
  return Json{{"split", e.split},
              {"norm", e.norm == MaeNorm::component_mean ? "component_mean" : "l2"},
              {"timing_warmup", e.timing_warmup},
              {"timing_trials", e.timing_trials}};
}

void read_eval(const Json& j, EvalOptions& e, const std::string& path) {
  detail::ObjectReader r(j, path);
  std::string norm = e.norm == MaeNorm::component_mean ? "component_mean" : "l2";
  r.field("split", e.split).field("norm", norm).field("timing_warmup", e.timing_warmup).field("timing_trials", e.timing_trials);
  r.done();
  if (norm == "component_mean") {
    e.norm = MaeNorm::component_mean;
  } else if (norm == "l2") {
    e.norm = MaeNorm::l2;
  } else {
    throw ConfigError(path + ".norm: unknown norm '" + norm + "' (valid: component_mean, l2)");
  }
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: empty component in '" + key + "'");
    if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

Json read_json_file(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open " + file.string());
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& file, const Json& j) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw IoError("cannot write " + file.string());
  os << j.dump(2) << '\n';
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string number(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run config file (JSON)");
  cmd->add_option("--set", c.sets, "Override a config value, e.g. --set train.lr=0.001");
  cmd->add_option("--threads", c.threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
}

RunConfig resolve(const Common& c) {
  auto cfg = load_run_config(c.config, c.sets);
  if (c.threads > 0) cfg.threads = c.threads;
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  set_num_threads(cfg.threads);
  return cfg;
}

void print_eval(std::ostream& out, const EvalReport& r) {
  out << "split " << r.split << " (" << r.count << " pairs)\n"
      << "MAE  " << number(r.mae.mean) << " +- " << number(r.mae.std) << " N\n"
      << "aCC  " << number(r.acc) << "\n"
      << "R2   " << number(r.r2) << "\n"
      << "time " << r.timing.mean_ms << " +- " << r.timing.std_ms << " ms per pair (" << r.timing.threads
      << " threads, " << r.timing.input_extent << "^3 input, " << r.timing.cpu << ")\n";
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
}

void write_grid(const fs::path& file, const std::vector<float>& map, std::int64_t width, std::int64_t height) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw IoError("cannot write " + file.string());
  os << std::setprecision(9);
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) os << (x ? "\t" : "") << map[static_cast<std::size_t>(x + width * y)];
    os << '\n';
  }
}

const SamplePair& pair_at(const Dataset& ds, std::int64_t index) {
  if (index < 0 || static_cast<std::size_t>(index) >= ds.size()) {
    throw ConfigError("--index " + std::to_string(index) + " outside [0, " + std::to_string(ds.size()) + ")");
  }
  return ds.pairs[static_cast<std::size_t>(index)];
}

}  // namespace

RunConfig parse_run_config(const Json& j) {
  RunConfig c;
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  detail::ObjectReader r(j, "config");
  r.field("model", c.model).field("threads", c.threads);
  if (const Json* s = r.raw("phantom")) read_json(*s, c.phantom, "phantom");
  if (const Json* s = r.raw("plan")) read_json(*s, c.plan, "plan");
  if (const Json* s = r.raw("arch")) {
    if (!s->is_object()) throw ConfigError("arch: expected an object");
    c.arch_overrides = *s;
  }
  if (const Json* s = r.raw("train")) read_json(*s, c.train, "train");
  if (const Json* s = r.raw("input")) read_json(*s, c.input, "input");
  if (const Json* s = r.raw("split")) read_json(*s, c.split, "split");
  if (const Json* s = r.raw("eval")) read_eval(*s, c.eval, "eval");
  r.done();
  validate_spec(c.phantom);
  validate_plan(c.plan);
  validate_train_config(c.train);
  validate_split(c.split);
  parse_model_kind(c.model);
  return c;
}

RunConfig load_run_config(const std::string& file, const std::vector<std::string>& overrides) {
  Json doc = file.empty() ? Json::object() : read_json_file(file);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

ArchSpec resolve_arch(const RunConfig& config, ModelKind kind) {
  ArchSpec arch = default_arch(kind);
  if (!config.arch_overrides.empty()) read_json(config.arch_overrides, arch, "arch");
  arch.mode = mode_for(kind);
  validate_arch(arch);
  return arch;
}

Json to_json(const RunConfig& c, const std::optional<ArchSpec>& arch) {
  Json j{{"model", c.model},   {"threads", c.threads}, {"phantom", c.phantom}, {"plan", c.plan},
         {"train", c.train},   {"input", c.input},     {"split", c.split},     {"eval", eval_json(c.eval)}};
  if (arch) {
    j["arch"] = *arch;
  } else if (!c.arch_overrides.empty()) {
    j["arch"] = c.arch_overrides;
  }
  return j;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Force estimation from OCT volume pairs: phantom generation, training, evaluation, inference",
               "octoforce"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  std::string out_dir, dataset_dir, checkpoint, model, split_name, reference_file, sample_file, input_file;
  std::string which = "sample";
  std::int64_t seed = -1;
  std::int64_t index = 0;
  std::int64_t extent = 0;
  bool resume = false;

  auto* gen = app.add_subcommand("generate", "Simulate the acquisition protocol and write a dataset");
  add_common(gen, common);
  gen->add_option("--seed", seed, "Acquisition seed (overrides plan.seed)");
  gen->add_option("--out", out_dir, "Dataset directory")->required();

  auto* trn = app.add_subcommand("train", "Train a model on a dataset");
  add_common(trn, common);
  trn->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  trn->add_option("--model", model, "siamcnn | diffcnn- | diffcnn+ | surfcnn-mip | surfcnn-depth");
  trn->add_option("--seed", seed, "Training seed (overrides train.seed)");
  trn->add_option("--out", out_dir, "Run directory")->required();
  trn->add_flag("--resume", resume, "Continue from <out>/last.ckpt");

  auto* evl = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  add_common(evl, common);
  evl->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evl->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  evl->add_option("--split", split_name, "train | val | test (overrides eval.split)");
  evl->add_option("--out", out_dir, "Report directory")->required();

  auto* inf = app.add_subcommand("infer", "Predict the force for one reference/sample pair");
  add_common(inf, common);
  inf->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  inf->add_option("--reference", reference_file, "Reference volume (.ofv)")->required();
  inf->add_option("--sample", sample_file, "Deformed sample volume (.ofv)")->required();

  auto* srf = app.add_subcommand("extract-surfaces", "Write MIP and depth maps of a volume");
  add_common(srf, common);
  srf->add_option("--input", input_file, "Volume file (.ofv)");
  srf->add_option("--dataset", dataset_dir, "Dataset directory (with --index)");
  srf->add_option("--index", index, "Pair index in the dataset");
  srf->add_option("--which", which, "reference | sample")->check(CLI::IsMember({"reference", "sample"}));
  srf->add_option("--extent", extent, "Downsample to extent^3 first");
  srf->add_option("--out", out_dir, "Output directory")->required();

  auto* exp = app.add_subcommand("export-pair", "Write one dataset pair as volume files for infer");
  add_common(exp, common);
  exp->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  exp->add_option("--index", index, "Pair index")->required();
  exp->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) {
      auto cfg = resolve(common);
      if (seed >= 0) cfg.plan.seed = static_cast<std::uint64_t>(seed);
      const auto ds = run_protocol(cfg.phantom, cfg.plan);
      write_dataset(out_dir, ds);
      write_json_file(fs::path(out_dir) / "config.json", to_json(cfg));
      out << "wrote " << ds.size() << " pairs (" << cfg.plan.roi_count << " ROIs x " << cfg.plan.deformations_per_roi
          << " poses) to " << out_dir << '\n';
    } else if (trn->parsed()) {
      auto cfg = resolve(common);
      if (!model.empty()) cfg.model = model;
      if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
      const ModelKind kind = parse_model_kind(cfg.model);
      const fs::path dir(out_dir);
      const auto dataset = read_dataset(dataset_dir);

      std::vector<TrainLogRecord> previous;
      std::optional<Checkpoint> start;
      if (resume) {
        start.emplace(load_checkpoint(dir / "last.ckpt"));
        if (start->kind != kind) {
          throw ConfigError("--resume: checkpoint holds " + std::string(to_string(start->kind)) + ", not " + cfg.model);
        }
        start->config = cfg.train;
        if (fs::exists(dir / "train_log.jsonl")) previous = read_log(dir / "train_log.jsonl");
      } else {
        start.emplace(init_checkpoint(kind, resolve_arch(cfg, kind), cfg.train));
        start->input = cfg.input;
        start->split = cfg.split;
      }
      ensure_dir(dir);
      const auto parts = split(dataset.size(), start->split, dataset.groups());
      TrainData data;
      data.train = prepare_examples(dataset, parts.train, kind, start->arch.input_extent, start->input);
      data.val = prepare_examples(dataset, parts.val, kind, start->arch.input_extent, start->input);
      TrainHooks hooks;
      hooks.on_eval = [&](const TrainLogRecord& r) {
        err << "step " << r.step << "  loss " << r.train_loss << "  val MAE " << r.val_mae_n << " N  lr " << r.lr << '\n';
      };
      auto result = train(std::move(*start), data, hooks);

      save_checkpoint(dir / "last.ckpt", result.last);
      if (result.improved || !fs::exists(dir / "best.ckpt")) save_checkpoint(dir / "best.ckpt", result.best);
      previous.insert(previous.end(), result.log.begin(), result.log.end());
      write_log(dir / "train_log.jsonl", previous);
      auto echo = cfg;
      echo.split = result.last.split;
      echo.input = result.last.input;
      write_json_file(dir / "config.json", to_json(echo, result.last.arch));
      out << "trained " << cfg.model << " for " << result.last.state.step << " steps; best val MAE "
          << number(result.last.state.best_val) << " N at step " << result.last.state.best_step << '\n';
    } else if (evl->parsed()) {
      auto cfg = resolve(common);
      if (!split_name.empty()) cfg.eval.split = split_name;
      auto cp = load_checkpoint(checkpoint);
      const auto dataset = read_dataset(dataset_dir);
      const auto report = evaluate(cp, dataset, fs::path(dataset_dir).filename().string(), cfg.eval);
      const fs::path dir(out_dir);
      write_report(dir, report);
      {
        std::ofstream os(dir / "metrics.json", std::ios::trunc);
        if (!os) throw IoError("cannot write metrics.json");
        os << metrics_json(report) << '\n';
      }
      cfg.model = std::string(to_string(cp.kind));
      cfg.split = cp.split;
      cfg.input = cp.input;
      write_json_file(dir / "config.json", to_json(cfg, cp.arch));
      print_eval(out, report);
    } else if (inf->parsed()) {
      resolve(common);
      auto cp = load_checkpoint(checkpoint);
      const auto f = predict(cp, read_volume(reference_file), read_volume(sample_file));
      out << "fx = " << number(f[0]) << " N\n"
          << "fy = " << number(f[1]) << " N\n"
          << "fz = " << number(f[2]) << " N\n";
    } else if (srf->parsed()) {
      auto cfg = resolve(common);
      Volume v;
      if (!input_file.empty()) {
        v = read_volume(input_file);
      } else if (!dataset_dir.empty()) {
        const auto ds = read_dataset(dataset_dir);
        const auto& p = pair_at(ds, index);
        v = which == "reference" ? *p.reference : *p.deformed;
      } else {
        throw ConfigError("extract-surfaces needs --input or --dataset");
      }
      if (extent > 0) v = downsample(v, {extent, extent, extent}, cfg.input.downsample);
      const auto maps = extract_surfaces(v);
      const fs::path dir(out_dir);
      ensure_dir(dir);
      write_grid(dir / "mip.tsv", maps.mip, maps.width, maps.height);
      write_grid(dir / "depth.tsv", maps.depth, maps.width, maps.height);
      write_json_file(dir / "config.json", to_json(cfg));
      out << "wrote " << maps.width << "x" << maps.height << " MIP and depth maps to " << out_dir << '\n';
    } else if (exp->parsed()) {
      resolve(common);
      const auto ds = read_dataset(dataset_dir);
      const auto& p = pair_at(ds, index);
      const fs::path dir(out_dir);
      ensure_dir(dir);
      write_volume(dir / "reference.ofv", *p.reference);
      write_volume(dir / "sample.ofv", *p.deformed);
      write_json_file(dir / "pair.json", Json{{"id", p.id},
                                              {"roi_index", p.roi_index},
                                              {"pose", p.pose},
                                              {"label", p.label},
                                              {"stiffness", p.stiffness}});
      out << "wrote pair " << index << " to " << out_dir << '\n';
    }
  } catch (const Error& e) {
    err << "error: " << e.error_class() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace octoforce::cli
