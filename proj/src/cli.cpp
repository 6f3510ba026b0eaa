#include "windinr/cli.hpp"

#include <omp.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <thread>

#include "CLI11.hpp"
#include "windinr/checks.hpp"
#include "windinr/osse.hpp"
#include "windinr/rng.hpp"
#include "windinr/training.hpp"

namespace windinr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "1.0.0";

json default_config() {
  json methods = json::array();
  for (baselines::Method m : baselines::kMethods) methods.push_back(baselines::method_name(m));
  json uav_methods = json::array();
  for (baselines::Method m : baselines::kMethods)
    if (m != baselines::Method::idw) uav_methods.push_back(baselines::method_name(m));
  const model::ModelConfig mc;
  const training::StageConfig s;
  const osse::RandomOsseConfig ro;
  const osse::UavOsseConfig uo;
  const correction::CorrectionConfig cc;
  const baselines::BaselineConfig bc;
  return {
      {"seed", 1},
      {"threads", 0},
      {"data", {{"cases", 40}, {"resolution", 32}, {"lattice", 16}, {"split_seed", 7}}},
      {"model", {{"hidden", mc.hidden}, {"film_blocks", mc.film_blocks}, {"groups", mc.groups}, {"tau", mc.tau}}},
      {"stage1",
       {{"m_sup", 256},
        {"m_qry", 1024},
        {"lambda_ref", s.lambda_ref},
        {"lr", s.lr},
        {"weight_decay", s.weight_decay},
        {"batch", s.batch},
        {"epochs", 30},
        {"eval_every", s.eval_every},
        {"max_steps", 0}}},
      {"stage2",
       {{"m_sup", 256},
        {"m_qry", 1024},
        {"lambda_align", s.lambda_align},
        {"lr", s.lr},
        {"weight_decay", s.weight_decay},
        {"batch", s.batch},
        {"epochs", 15},
        {"eval_every", s.eval_every},
        {"max_steps", 0}}},
      {"prior", {{"rho", prior::kShrinkage}, {"eps", prior::kFloor}}},
      {"correction", {{"steps", cc.steps}, {"lr", cc.lr}, {"clip", cc.clip}}},
      {"finetune", {{"steps", bc.ft_steps}, {"lr", bc.ft_lr}, {"anchor", bc.anchor}}},
      {"osse_random",
       {{"n_obs", ro.n_obs},
        {"n_holdout", ro.n_holdout},
        {"noise", ro.noise},
        {"methods", methods},
        {"sweep", false},
        {"sweep_counts", ro.sweep_counts},
        {"heights", false},
        {"height_bins", 8},
        {"serial", false}}},
      {"osse_uav",
       {{"methods", uav_methods},
        {"start", uo.start},
        {"end", uo.end},
        {"height_m", uo.height_m},
        {"speed", uo.speed},
        {"lead", uo.lead},
        {"spacing", uo.spacing},
        {"dt", uo.dt},
        {"corridor_length", uo.corridor_length},
        {"corridor_width", uo.corridor_width},
        {"along", uo.along},
        {"cross", uo.cross},
        {"neighbors", uo.neighbors},
        {"power", uo.power},
        {"map_step", uo.map_step},
        {"map_resolution", uo.map_resolution}}},
  };
}

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// -- config plumbing ----------------------------------------------------------------

/// Flag values applied on top of the config when the flag was given.
class Overrides {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help + " (config " + pointer + ")");
    apply_.push_back([opt, value, pointer](json& cfg) {
      if (opt->count() > 0) cfg[json::json_pointer(pointer)] = *value;
    });
    return opt;
  }
  CLI::Option* flag(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    CLI::Option* opt = app->add_flag(flag)->description(help + " (config " + pointer + ")");
    apply_.push_back([opt, pointer](json& cfg) {
      if (opt->count() > 0) cfg[json::json_pointer(pointer)] = true;
    });
    return opt;
  }
  void apply(json& cfg) const {
    for (const auto& f : apply_) f(cfg);
  }

 private:
  std::vector<std::function<void(json&)>> apply_;
};

json load_config_file(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw io::FormatError("config " + path.string() + ": " + e.what());
  }
  if (j.contains("config") && j.contains("tool")) return j.at("config");  // a run manifest
  return j;
}

std::uint64_t env_seed() {
  const char* s = std::getenv("WINDINR_SEED");
  if (!s || !*s) return 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw UsageError(std::string("WINDINR_SEED must be an unsigned integer, got '") + s + "'");
  return v;
}

template <class T>
T get(const json& cfg, const std::string& pointer) {
  try {
    return cfg.at(json::json_pointer(pointer)).get<T>();
  } catch (const json::exception& e) {
    throw UsageError("config " + pointer + ": " + e.what());
  }
}

model::ModelConfig model_config(const json& c) {
  model::ModelConfig m;
  m.hidden = get<std::size_t>(c, "/model/hidden");
  m.film_blocks = get<std::size_t>(c, "/model/film_blocks");
  m.groups = get<std::size_t>(c, "/model/groups");
  m.tau = get<double>(c, "/model/tau");
  return m;
}

training::StageConfig stage_config(const json& c, int stage) {
  const std::string p = stage == 1 ? "/stage1/" : "/stage2/";
  training::StageConfig s;
  s.m_sup = get<std::size_t>(c, p + "m_sup");
  s.m_qry = get<std::size_t>(c, p + "m_qry");
  if (stage == 1)
    s.lambda_ref = get<double>(c, p + "lambda_ref");
  else
    s.lambda_align = get<double>(c, p + "lambda_align");
  s.lr = get<double>(c, p + "lr");
  s.weight_decay = get<double>(c, p + "weight_decay");
  s.batch = get<std::size_t>(c, p + "batch");
  s.epochs = get<std::size_t>(c, p + "epochs");
  s.eval_every = get<std::size_t>(c, p + "eval_every");
  s.max_steps = get<std::size_t>(c, p + "max_steps");
  s.seed = get<std::uint64_t>(c, "/seed");
  return s;
}

baselines::BaselineConfig baseline_config(const json& c) {
  baselines::BaselineConfig b;
  b.correction.steps = get<std::size_t>(c, "/correction/steps");
  b.correction.lr = get<double>(c, "/correction/lr");
  b.correction.clip = get<double>(c, "/correction/clip");
  b.correction.validate();
  b.ft_steps = get<std::size_t>(c, "/finetune/steps");
  b.ft_lr = get<double>(c, "/finetune/lr");
  b.anchor = get<double>(c, "/finetune/anchor");
  return b;
}

std::vector<baselines::Method> methods_of(const json& c, const std::string& pointer) {
  std::vector<baselines::Method> out;
  for (const auto& name : get<std::vector<std::string>>(c, pointer)) {
    // accept comma-separated entries as well as JSON lists
    std::size_t start = 0;
    while (start <= name.size()) {
      const std::size_t comma = name.find(',', start);
      const std::string part = name.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!part.empty()) {
        try {
          out.push_back(baselines::parse_method(part));
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  if (out.empty()) throw UsageError("no methods selected");
  return out;
}

// -- manifest -----------------------------------------------------------------------

std::uint64_t tree_hash(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += fs::relative(f, dir).generic_string() + ":" + io::hex64(io::file_hash(f)) + "\n";
  return fnv1a64(acc);
}

json host_description() {
  char name[256] = {0};
  if (gethostname(name, sizeof name - 1) != 0) name[0] = '\0';
  return {{"hostname", name},
          {"hardware_threads", std::thread::hardware_concurrency()},
          {"omp_max_threads", omp_get_max_threads()},
          {"compiler", __VERSION__}};
}

void write_manifest(const fs::path& dir, const std::string& command, const json& cfg, const json& artifacts) {
  json m = {{"tool", "windinr"},
            {"version", kVersion},
            {"command", command},
            {"config", cfg},
            {"seeds", {{"global", cfg.at("seed")}, {"split", cfg.at("/data/split_seed"_json_pointer)}}},
            {"artifacts", artifacts},
            {"host", host_description()}};
  fs::create_directories(dir);
  io::write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

// -- subcommands --------------------------------------------------------------------

struct Paths {
  std::string data = "data";
  std::string out;
  std::string ckpt = "model.ckpt";
  std::string prior = "adaptive.prior";
  std::string iso_prior;
  std::string init;
  std::string case_name;
  std::string runs = "runs";
  std::string stage = "both";
};

int cmd_gen(const json& cfg, const Paths& p) {
  synth::GenerateOptions o;
  o.cases = get<std::size_t>(cfg, "/data/cases");
  o.resolution = get<std::size_t>(cfg, "/data/resolution");
  o.case_options.lattice = get<std::size_t>(cfg, "/data/lattice");
  o.seed = get<std::uint64_t>(cfg, "/seed");
  o.split_seed = get<std::uint64_t>(cfg, "/data/split_seed");
  const fs::path out = p.out.empty() ? fs::path(p.data) : fs::path(p.out);
  synth::write_dataset(out, o);
  write_manifest(out, "gen", cfg, {{"data", io::hex64(tree_hash(out))}});
  std::cout << "wrote " << o.cases << " cases to " << out.string() << "\n";
  return kOk;
}

void print_progress(const char* stage, const training::CurveRow& r) {
  std::cerr << stage << " step " << r.step << " train " << r.train_loss << " val " << r.val_loss << "\n";
}

int cmd_train(const json& cfg, const Paths& p) {
  const fs::path out = p.out.empty() ? fs::path("run") : fs::path(p.out);
  const synth::Dataset data = synth::read_dataset(p.data);
  if (p.stage != "both" && p.stage != "1" && p.stage != "2") throw UsageError("--stage must be 1, 2 or both");
  fs::create_directories(out);
  json artifacts = {{"data", io::hex64(tree_hash(p.data))}};

  model::WindModel m = p.init.empty() ? model::WindModel(model_config(cfg), get<std::uint64_t>(cfg, "/seed"))
                                      : model::load_checkpoint(p.init);
  if (!p.init.empty()) artifacts["init"] = io::hex64(io::file_hash(p.init));
  if (p.stage != "2") {
    auto r = training::train_stage1(data, m, stage_config(cfg, 1),
                                    [](const training::CurveRow& row) { print_progress("stage1", row); });
    io::write_csv(out / "curve_stage1.csv", training::curve_table(r.curve));
    m = std::move(r.best);
    model::save_checkpoint(out / "stage1.ckpt", m);
    artifacts["stage1"] = io::hex64(io::file_hash(out / "stage1.ckpt"));
    std::cout << "stage 1: " << r.steps << " steps, best validation " << r.best_val << "\n";
  }
  if (p.stage != "1") {
    auto r = training::train_stage2(data, m, stage_config(cfg, 2),
                                    [](const training::CurveRow& row) { print_progress("stage2", row); });
    io::write_csv(out / "curve_stage2.csv", training::curve_table(r.curve));
    m = std::move(r.best);
    std::cout << "stage 2: " << r.steps << " steps, best validation " << r.best_val << "\n";
  }
  model::save_checkpoint(out / "model.ckpt", m);
  artifacts["checkpoint"] = io::hex64(io::file_hash(out / "model.ckpt"));
  write_manifest(out, "train", cfg, artifacts);
  std::cout << "wrote " << (out / "model.ckpt").string() << "\n";
  return kOk;
}

int cmd_prior(const json& cfg, const Paths& p) {
  const fs::path out = p.out.empty() ? fs::path(p.ckpt).parent_path() : fs::path(p.out);
  const model::WindModel m = model::load_checkpoint(p.ckpt);
  const synth::Dataset data = synth::read_dataset(p.data);
  const prior::Discrepancies e = prior::collect_discrepancies(data, m, stage_config(cfg, 1));
  prior::PriorStats a = prior::estimate_prior(e, get<double>(cfg, "/prior/rho"), get<double>(cfg, "/prior/eps"));
  prior::PriorStats iso = prior::isotropic_prior(e, get<double>(cfg, "/prior/eps"));
  a.checkpoint_hash = iso.checkpoint_hash = m.params().hash();
  fs::create_directories(out.empty() ? fs::path(".") : out);
  prior::save_prior(out / "adaptive.prior", a);
  prior::save_prior(out / "isotropic.prior", iso);
  write_manifest(out.empty() ? fs::path(".") : out, "prior", cfg,
                 {{"data", io::hex64(tree_hash(p.data))},
                  {"checkpoint", io::hex64(io::file_hash(p.ckpt))},
                  {"adaptive_prior", io::hex64(io::file_hash(out / "adaptive.prior"))},
                  {"isotropic_prior", io::hex64(io::file_hash(out / "isotropic.prior"))}});
  std::cout << "prior from " << e.size() << " training cases written to " << out.string() << "\n";
  return kOk;
}

struct Loaded {
  model::WindModel model;
  prior::PriorStats adaptive;
  std::optional<prior::PriorStats> isotropic;
  json artifacts;
};

Loaded load_artifacts(const Paths& p, bool need_iso) {
  io::require_exists(p.ckpt);
  Loaded l{model::load_checkpoint(p.ckpt), {}, std::nullopt, json::object()};
  const std::uint64_t h = l.model.params().hash();
  l.adaptive = prior::load_prior(p.prior, h);
  l.artifacts["checkpoint"] = io::hex64(io::file_hash(p.ckpt));
  l.artifacts["adaptive_prior"] = io::hex64(io::file_hash(p.prior));
  const fs::path iso = p.iso_prior.empty() ? fs::path(p.prior).parent_path() / "isotropic.prior" : fs::path(p.iso_prior);
  if (need_iso || fs::exists(iso)) {
    l.isotropic = prior::load_prior(iso, h);
    l.artifacts["isotropic_prior"] = io::hex64(io::file_hash(iso));
  }
  return l;
}

void apply_threads_to_timing(const json& cfg, bool& serial) {
  if (get<int>(cfg, "/threads") == 1) serial = true;
}

int cmd_osse_random(const json& cfg, const Paths& p) {
  const auto methods = methods_of(cfg, "/osse_random/methods");
  const bool need_iso = std::find(methods.begin(), methods.end(), baselines::Method::iso) != methods.end();
  Loaded l = load_artifacts(p, need_iso);
  const synth::Dataset data = synth::read_dataset(p.data);
  l.artifacts["data"] = io::hex64(tree_hash(p.data));

  osse::RandomOsseConfig rc;
  rc.n_obs = get<std::size_t>(cfg, "/osse_random/n_obs");
  rc.n_holdout = get<std::size_t>(cfg, "/osse_random/n_holdout");
  rc.noise = get<std::array<double, 3>>(cfg, "/osse_random/noise");
  rc.seed = get<std::uint64_t>(cfg, "/seed");
  rc.sweep = get<bool>(cfg, "/osse_random/sweep");
  rc.sweep_counts = get<std::vector<std::size_t>>(cfg, "/osse_random/sweep_counts");
  rc.heights = get<bool>(cfg, "/osse_random/heights");
  rc.height_edges = osse::height_edges(get<std::size_t>(cfg, "/osse_random/height_bins"));
  rc.serial = get<bool>(cfg, "/osse_random/serial");
  apply_threads_to_timing(cfg, rc.serial);

  const auto r = osse::run_random_osse(data, l.model, l.adaptive, l.isotropic ? &*l.isotropic : nullptr, methods, rc,
                                       baseline_config(cfg));
  const fs::path out = p.out.empty() ? fs::path("osse_random") : fs::path(p.out);
  osse::write_random_outputs(out, r);
  write_manifest(out, "osse-random", cfg, l.artifacts);
  std::cout << osse::aggregate_table(r.aggregate).to_string();
  return kOk;
}

int cmd_osse_uav(const json& cfg, const Paths& p) {
  const auto methods = methods_of(cfg, "/osse_uav/methods");
  const bool need_iso = std::find(methods.begin(), methods.end(), baselines::Method::iso) != methods.end();
  Loaded l = load_artifacts(p, need_iso);
  const synth::Dataset data = synth::read_dataset(p.data);
  l.artifacts["data"] = io::hex64(tree_hash(p.data));

  std::string name = p.case_name;
  if (name.empty()) {
    if (data.splits.test.empty()) throw UsageError("dataset has no test cases; pass --case");
    name = data.cases[data.splits.test.front()].name;
  }
  name = fs::path(name).filename().string();
  const auto it = std::find_if(data.cases.begin(), data.cases.end(), [&](const synth::Case& c) { return c.name == name; });
  if (it == data.cases.end()) throw io::MissingArtifact(fs::path(p.data) / "cases" / name);

  osse::UavOsseConfig uc;
  uc.start = get<std::array<double, 2>>(cfg, "/osse_uav/start");
  uc.end = get<std::array<double, 2>>(cfg, "/osse_uav/end");
  uc.height_m = get<double>(cfg, "/osse_uav/height_m");
  uc.speed = get<double>(cfg, "/osse_uav/speed");
  uc.lead = get<double>(cfg, "/osse_uav/lead");
  uc.spacing = get<double>(cfg, "/osse_uav/spacing");
  uc.dt = get<double>(cfg, "/osse_uav/dt");
  uc.corridor_length = get<double>(cfg, "/osse_uav/corridor_length");
  uc.corridor_width = get<double>(cfg, "/osse_uav/corridor_width");
  uc.along = get<std::size_t>(cfg, "/osse_uav/along");
  uc.cross = get<std::size_t>(cfg, "/osse_uav/cross");
  uc.neighbors = get<std::size_t>(cfg, "/osse_uav/neighbors");
  uc.power = get<double>(cfg, "/osse_uav/power");
  uc.noise = get<std::array<double, 3>>(cfg, "/osse_random/noise");
  uc.seed = get<std::uint64_t>(cfg, "/seed");
  uc.map_step = get<std::size_t>(cfg, "/osse_uav/map_step");
  uc.map_resolution = get<std::size_t>(cfg, "/osse_uav/map_resolution");

  const auto runner = osse::model_runners(data.terrain, l.model, l.adaptive, l.isotropic ? &*l.isotropic : nullptr,
                                          baseline_config(cfg))(*it);
  std::vector<baselines::Method> ms;
  for (auto m : methods)
    if (m == baselines::Method::idw)
      std::cerr << "warning: IDW is not evaluated in the UAV corridor experiment; skipped\n";
    else
      ms.push_back(m);
  const auto r = osse::run_uav_osse(*it, runner, ms, uc);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  const fs::path out = p.out.empty() ? fs::path("osse_uav") : fs::path(p.out);
  osse::write_uav_outputs(out, r);
  l.artifacts["case"] = name;
  write_manifest(out, "osse-uav", cfg, l.artifacts);
  std::cout << "UAV OSSE on " << name << ": " << r.steps.size() << " steps written to " << out.string() << "\n";
  return kOk;
}

int cmd_report(const Paths& p) {
  io::require_exists(p.runs);
  std::vector<fs::path> found;
  for (const auto& e : fs::recursive_directory_iterator(p.runs))
    if (e.is_regular_file() && e.path().filename() == "aggregate.csv") found.push_back(e.path());
  std::sort(found.begin(), found.end());
  if (found.empty()) throw io::MissingArtifact(fs::path(p.runs) / "**" / "aggregate.csv");
  io::CsvTable out;
  for (const auto& f : found) {
    const io::CsvTable t = io::read_csv(f);
    if (out.header.empty()) {
      out.header = {"run"};
      out.header.insert(out.header.end(), t.header.begin(), t.header.end());
    } else if (t.header.size() + 1 != out.header.size() ||
               !std::equal(t.header.begin(), t.header.end(), out.header.begin() + 1)) {
      throw io::FormatError(f.string() + " has a different column layout");
    }
    const std::string run = fs::relative(f.parent_path(), p.runs).generic_string();
    for (const auto& row : t.rows) {
      std::vector<std::string> r = {run.empty() ? "." : run};
      r.insert(r.end(), row.begin(), row.end());
      out.rows.push_back(std::move(r));
    }
  }
  const fs::path dst = p.out.empty() ? fs::path("report.csv") : fs::path(p.out);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  io::write_csv(dst, out);
  std::cout << "collected " << found.size() << " runs into " << dst.string() << "\n";
  return kOk;
}

int cmd_selfcheck(const json& cfg) {
  const std::uint64_t seed = get<std::uint64_t>(cfg, "/seed");
  bool ok = true;
  for (const auto& r : {checks::gradient_suite(5, seed), checks::oracle_suite(20, seed),
                        checks::mean_shift_suite(20, seed), checks::prior_suite(seed)}) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.pass;
  }
  return ok ? kOk : kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Latent-state wind field correction: data, training, priors and OSSEs", "windinr"};
  app.require_subcommand(0, 1);
  app.set_version_flag("--version", kVersion);

  std::string config_path;
  bool dump = false;
  Paths p;
  Overrides ov;

  auto common = [&](CLI::App* sc) {
    sc->add_option("--config", config_path, "JSON config file or run manifest");
    sc->add_flag("--dump-config", dump, "print the effective configuration and exit");
    ov.add<std::uint64_t>(sc, "--seed", "/seed", "global seed");
    ov.add<int>(sc, "--threads", "/threads", "worker threads (1: deterministic timing)");
  };
  common(&app);

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  common(gen);
  gen->add_option("--out,--data", p.out, "dataset directory");
  ov.add<std::size_t>(gen, "--cases", "/data/cases", "number of cases");
  ov.add<std::size_t>(gen, "--resolution", "/data/resolution", "terrain grid nodes per side");
  ov.add<std::size_t>(gen, "--lattice", "/data/lattice", "hr lattice per axis");
  ov.add<std::uint64_t>(gen, "--split-seed", "/data/split_seed", "split seed");

  CLI::App* train = app.add_subcommand("train", "two-stage training");
  common(train);
  train->add_option("--data", p.data, "dataset directory");
  train->add_option("--out", p.out, "run directory");
  train->add_option("--init", p.init, "start from this checkpoint");
  train->add_option("--stage", p.stage, "1, 2 or both");
  ov.add<std::size_t>(train, "--hidden", "/model/hidden", "decoder width");
  ov.add<std::size_t>(train, "--film-blocks", "/model/film_blocks", "FiLM blocks");
  ov.add<std::size_t>(train, "--epochs", "/stage1/epochs", "stage-1 epochs");
  ov.add<std::size_t>(train, "--epochs2", "/stage2/epochs", "stage-2 epochs");
  ov.add<double>(train, "--lr", "/stage1/lr", "stage-1 learning rate");
  ov.add<std::size_t>(train, "--max-steps", "/stage1/max_steps", "cap on stage-1 optimizer steps");

  CLI::App* pri = app.add_subcommand("prior", "estimate the latent priors");
  common(pri);
  pri->add_option("--data", p.data, "dataset directory");
  pri->add_option("--ckpt", p.ckpt, "trained checkpoint");
  pri->add_option("--out", p.out, "output directory");
  ov.add<double>(pri, "--rho", "/prior/rho", "shrinkage");
  ov.add<double>(pri, "--eps", "/prior/eps", "diagonal floor");

  auto correction_flags = [&](CLI::App* sc, const std::string& method_ptr) {
    sc->add_option("--data", p.data, "dataset directory");
    sc->add_option("--ckpt", p.ckpt, "trained checkpoint");
    sc->add_option("--prior", p.prior, "adaptive prior file");
    sc->add_option("--iso-prior", p.iso_prior, "isotropic prior file (default: next to --prior)");
    sc->add_option("--out", p.out, "output directory");
    ov.add<std::vector<std::string>>(sc, "--method", method_ptr, "methods (comma-separated or repeated)");
    ov.add<std::size_t>(sc, "--steps", "/correction/steps", "latent correction steps");
    ov.add<double>(sc, "--lr", "/correction/lr", "latent correction learning rate");
    ov.add<double>(sc, "--clip", "/correction/clip", "gradient clipping norm");
  };
  CLI::App* ro = app.add_subcommand("osse-random", "random-observation OSSE over the test split");
  common(ro);
  correction_flags(ro, "/osse_random/methods");
  ov.flag(ro, "--sweep", "/osse_random/sweep", "observation-count sweep");
  ov.flag(ro, "--heights", "/osse_random/heights", "height-binned RMSE");
  ov.flag(ro, "--serial", "/osse_random/serial", "one case at a time");
  ov.add<std::size_t>(ro, "--n-obs", "/osse_random/n_obs", "observations per case");

  CLI::App* uav = app.add_subcommand("osse-uav", "UAV-aided approach OSSE on one case");
  common(uav);
  correction_flags(uav, "/osse_uav/methods");
  uav->add_option("--case", p.case_name, "case name or directory (default: first test case)");
  ov.add<std::size_t>(uav, "--map-step", "/osse_uav/map_step", "step of the improvement maps");

  CLI::App* rep = app.add_subcommand("report", "collect aggregate tables");
  common(rep);
  rep->add_option("--runs", p.runs, "directory searched for aggregate.csv");
  rep->add_option("--out", p.out, "output CSV");

  CLI::App* self = app.add_subcommand("selfcheck", "gradient, oracle and prior suites");
  common(self);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    json cfg = default_config();
    if (!config_path.empty()) cfg.merge_patch(load_config_file(config_path));
    ov.apply(cfg);
    if (const std::uint64_t s = env_seed()) cfg["seed"] = s;
    if (dump) {
      std::cout << cfg.dump(2) << "\n";
      return kOk;
    }
    const auto chosen = app.get_subcommands();
    if (chosen.empty()) {
      std::cerr << app.help();
      return kUsage;
    }
    const int threads = get<int>(cfg, "/threads");
    if (threads > 0) kernels::set_thread_count(threads);
    const std::string name = chosen.front()->get_name();
    if (name == "gen") return cmd_gen(cfg, p);
    if (name == "train") return cmd_train(cfg, p);
    if (name == "prior") return cmd_prior(cfg, p);
    if (name == "osse-random") return cmd_osse_random(cfg, p);
    if (name == "osse-uav") return cmd_osse_uav(cfg, p);
    if (name == "report") return cmd_report(p);
    if (name == "selfcheck") return cmd_selfcheck(cfg);
    return kUsage;
  } catch (const io::MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace windinr::cli
