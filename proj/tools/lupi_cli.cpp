// lupi_cli: data generation, training, sweeps, diagnostics and bound
// calculators behind one reproducible command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error, 3 diverged training.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lupi/bounds.hpp"
#include "lupi/checkpoint.hpp"
#include "lupi/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lupi;

namespace {

constexpr const char* kVersion = "0.1.0";

json default_config() {
  return json{
      {"gen",
       {{"num_classes", 10},
        {"grid_side", 16},
        {"proto_support", 24},
        {"proto_lo", 0.5},
        {"proto_hi", 1.0},
        {"distractors", 3},
        {"fragment_cells", 8},
        {"noise_std", 0.1},
        {"jitter", 2},
        {"clip_hi", 1.5}}},
      {"arch",
       {{"input_dim", 256},
        {"num_classes", 10},
        {"trunk_widths", {64, 32}},
        {"site_widths", {32, 32}},
        {"var_hidden", 32}}},
      {"dropout", {{"sigma_sq_max", 4.0}, {"mc_samples", 1}}},
      {"train",
       {{"optimizer", "adam"},
        {"lr", 1e-3},
        {"momentum", 0.9},
        {"adam_beta1", 0.9},
        {"adam_beta2", 0.999},
        {"adam_eps", 1e-8},
        {"weight_decay", 1e-4},
        {"batch_size", 64},
        {"max_epochs", 60},
        {"patience", 5},
        {"decay_factor", 10.0},
        {"beta", 1.0},
        {"mc_samples", 1},
        {"divergence_threshold", 1e6}}},
      {"sweep",
       {{"pool_n", 6000},
        {"data_seed", 7},
        {"split", {0.70, 0.15, 0.15}},
        {"drop_prob", 0.5},
        {"lambda_mt", 0.1},
        {"sizes", {100, 200, 400, 800, 1600, 3200}},
        {"seeds", {0, 1, 2, 3, 4}},
        {"models", {"lupi", "noxstar"}},
        {"fractions", {0.0, 0.02, 0.1, 0.5, 1.0}},
        {"n", 800}}}};
}

void reject_unknown_keys(const json& incoming, const json& reference,
                         const std::string& prefix) {
  for (auto it = incoming.begin(); it != incoming.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key()))
      throw CLI::ValidationError("config", "unknown config key: " + path);
    if (it.value().is_object())
      reject_unknown_keys(it.value(), reference.at(it.key()), path);
  }
}

/// Config document: defaults <- config file <- dotted flag overrides.
struct ConfigDoc {
  json j = default_config();

  void merge_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    json doc = json::parse(f);
    // run.json records the config under "config"; accept both layouts
    if (doc.contains("config")) doc = doc.at("config");
    reject_unknown_keys(doc, j, "");
    j.merge_patch(doc);
  }

  void apply_override(const std::string& dotted, const std::string& value) {
    std::istringstream is(dotted);
    std::string part;
    json* cur = &j;
    std::vector<std::string> parts;
    while (std::getline(is, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &cur->at(parts[i]);
    json& leaf = cur->at(parts.back());
    if (leaf.is_number_integer() || leaf.is_number_unsigned()) {
      leaf = std::stoll(value);
    } else if (leaf.is_number_float()) {
      leaf = std::stod(value);
    } else if (leaf.is_string()) {
      leaf = value;
    } else if (leaf.is_array()) {
      json arr = json::array();
      std::istringstream ls(value);
      std::string item;
      bool numeric = leaf.empty() || leaf[0].is_number();
      bool integral = !leaf.empty() && leaf[0].is_number_integer();
      while (std::getline(ls, item, ',')) {
        if (!numeric) arr.push_back(item);
        else if (integral) arr.push_back(std::stoll(item));
        else arr.push_back(std::stod(item));
      }
      leaf = arr;
    } else {
      throw CLI::ValidationError("config", "cannot override key " + dotted);
    }
  }

  GenConfig gen() const {
    const json& g = j.at("gen");
    GenConfig c;
    c.num_classes = g.at("num_classes");
    c.grid_side = g.at("grid_side");
    c.proto_support = g.at("proto_support");
    c.proto_lo = g.at("proto_lo");
    c.proto_hi = g.at("proto_hi");
    c.distractors = g.at("distractors");
    c.fragment_cells = g.at("fragment_cells");
    c.noise_std = g.at("noise_std");
    c.jitter = g.at("jitter");
    c.clip_hi = g.at("clip_hi");
    return c;
  }

  ModelArch arch() const {
    const json& a = j.at("arch");
    ModelArch m;
    m.input_dim = a.at("input_dim");
    m.num_classes = a.at("num_classes");
    m.trunk_widths = a.at("trunk_widths").get<std::vector<std::size_t>>();
    m.site_widths = a.at("site_widths").get<std::vector<std::size_t>>();
    m.var_hidden = a.at("var_hidden");
    return m;
  }

  HeteroDropoutConfig dropout() const {
    const json& d = j.at("dropout");
    return {d.at("sigma_sq_max").get<double>(), d.at("mc_samples").get<int>()};
  }

  TrainConfig train() const {
    const json& t = j.at("train");
    TrainConfig c;
    std::string opt = t.at("optimizer");
    if (opt == "adam") c.optimizer = OptimizerKind::kAdam;
    else if (opt == "sgd") c.optimizer = OptimizerKind::kSgdMomentum;
    else throw CLI::ValidationError("config", "train.optimizer must be adam or sgd");
    c.lr = t.at("lr");
    c.momentum = t.at("momentum");
    c.adam_beta1 = t.at("adam_beta1");
    c.adam_beta2 = t.at("adam_beta2");
    c.adam_eps = t.at("adam_eps");
    c.weight_decay = t.at("weight_decay");
    c.batch_size = t.at("batch_size");
    c.max_epochs = t.at("max_epochs");
    c.patience = t.at("patience");
    c.decay_factor = t.at("decay_factor");
    c.beta = t.at("beta");
    c.mc_samples = t.at("mc_samples");
    c.divergence_threshold = t.at("divergence_threshold");
    return c;
  }

  SweepSetup sweep_setup() const {
    const json& s = j.at("sweep");
    SweepSetup setup;
    setup.gen = gen();
    setup.arch = arch();
    setup.dropout = dropout();
    setup.pool_n = s.at("pool_n");
    setup.data_seed = s.at("data_seed");
    auto split = s.at("split").get<std::vector<double>>();
    if (split.size() != 3)
      throw CLI::ValidationError("config", "sweep.split needs 3 fractions");
    setup.split_fractions = {split[0], split[1], split[2]};
    setup.drop_prob = s.at("drop_prob");
    setup.lambda_mt = s.at("lambda_mt");
    return setup;
  }
};

/// Shared plumbing for every subcommand: --config, dotted overrides, --out,
/// --seed (LUPI_SEED is the fallback default), --jobs.
struct CommonOpts {
  std::string config_file;
  std::vector<std::string> overrides;  // key=value
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t jobs = 1;

  void attach(CLI::App* cmd, bool with_out_required = false) {
    cmd->add_option("--config", config_file, "JSON config file");
    cmd->add_option("--set", overrides,
                    "dotted config override, e.g. --set train.lr=0.01");
    auto* out_opt = cmd->add_option("--out", out, "output directory");
    if (with_out_required) out_opt->required();
    cmd->add_option("--seed", seed, "run seed (default: LUPI_SEED or 0)")
        ->each([this](const std::string&) { seed_given = true; });
    cmd->add_option("--jobs", jobs, "max concurrent training cells");
  }

  ConfigDoc load() const {
    ConfigDoc doc;
    if (!config_file.empty()) doc.merge_file(config_file);
    for (const std::string& kv : overrides) {
      auto pos = kv.find('=');
      if (pos == std::string::npos)
        throw CLI::ValidationError("--set", "expected key=value, got " + kv);
      doc.apply_override(kv.substr(0, pos), kv.substr(pos + 1));
    }
    return doc;
  }

  std::uint64_t effective_seed() const {
    if (seed_given) return seed;
    if (const char* env = std::getenv("LUPI_SEED")) return std::stoull(env);
    return 0;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void write_run_json(const fs::path& dir, const std::string& subcommand,
                    const ConfigDoc& doc, std::uint64_t seed, const json& args) {
  json run;
  run["tool"] = "lupi_cli";
  run["version"] = kVersion;
  run["format_version"] = 1;
  run["subcommand"] = subcommand;
  run["seed"] = seed;
  run["args"] = args;
  run["config"] = doc.j;
  write_text(dir / "run.json", run.dump(2) + "\n");
}

fs::path ensure_out(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

TripletDataset load_or_generate(const std::string& data_file, const ConfigDoc& doc,
                                std::size_t n, double fraction, std::uint64_t seed) {
  if (!data_file.empty()) return load_dataset(data_file);
  return generate(doc.gen(), n, fraction, seed);
}

Model build_model(const std::string& name, const ConfigDoc& doc, std::uint64_t seed) {
  ModelKind kind = model_kind_from_name(name);
  if (kind == ModelKind::kLupi) return build_lupi(doc.arch(), doc.dropout(), seed);
  BaselineKind bk;
  bk.kind = kind;
  bk.drop_prob = doc.j.at("sweep").at("drop_prob");
  bk.lambda_mt = doc.j.at("sweep").at("lambda_mt");
  return build_baseline(bk, doc.arch(), seed);
}

std::string bounds_csv_row(const std::string& op,
                           const std::vector<std::pair<std::string, std::string>>& inputs,
                           const std::string& value) {
  std::ostringstream os;
  os << "op,inputs,value\n" << op << ",";
  for (std::size_t i = 0; i < inputs.size(); ++i)
    os << (i ? ";" : "") << inputs[i].first << "=" << inputs[i].second;
  os << "," << value << "\n";
  return os.str();
}

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void maybe_write_bounds(const CommonOpts& common, const ConfigDoc& doc,
                        const std::string& op, const std::string& csv) {
  if (common.out.empty()) return;
  fs::path dir = ensure_out(common.out);
  write_text(dir / "bounds.csv", csv);
  write_run_json(dir, "bounds " + op, doc, common.effective_seed(), json::object());
}

int run_gen_data(const CommonOpts& common, std::size_t n, double fraction) {
  ConfigDoc doc = common.load();
  std::uint64_t seed = common.effective_seed();
  TripletDataset ds = generate(doc.gen(), n, fraction, seed);
  fs::path dir = ensure_out(common.out);
  save_dataset(ds, (dir / "dataset.json").string());
  write_run_json(dir, "gen-data", doc, seed,
                 {{"n", n}, {"fraction", fraction}});
  std::printf("wrote %zu records (%zu with x*) to %s\n", ds.size(),
              static_cast<std::size_t>(
                  std::count(ds.has_star.begin(), ds.has_star.end(), 1)),
              (dir / "dataset.json").string().c_str());
  return 0;
}

int run_train(const CommonOpts& common, const std::string& model_name,
              const std::string& data_file, double fraction) {
  ConfigDoc doc = common.load();
  std::uint64_t seed = common.effective_seed();
  SweepSetup setup = doc.sweep_setup();

  TripletDataset pool =
      load_or_generate(data_file, doc, setup.pool_n, 1.0, setup.data_seed);
  auto parts = split(pool, setup.split_fractions, setup.data_seed);
  if (fraction < 1.0) parts[0] = with_xstar_fraction(parts[0], fraction, seed);

  Model model = build_model(model_name, doc, seed);
  TrainConfig cfg = doc.train();
  cfg.seed = seed;
  RunRecord rec = train(model, parts[0], parts[1], parts[2], cfg);

  fs::path dir = ensure_out(common.out);
  write_text(dir / "metrics.csv", metrics_csv(rec));
  save_checkpoint(model, seed, (dir / "checkpoint.json").string());
  write_run_json(dir, "train", doc, seed,
                 {{"model", model_name}, {"data", data_file}, {"fraction", fraction}});
  std::printf("status=%s test_top1=%.4f test_ce=%.4f best_epoch=%zu\n",
              rec.status.c_str(), rec.final_test.top1, rec.final_test.ce,
              rec.best_epoch);
  return rec.status == "diverged" ? 3 : 0;
}

int run_eval(const CommonOpts& common, const std::string& model_name,
             const std::string& checkpoint_file, const std::string& data_file) {
  ConfigDoc doc = common.load();
  Model model = build_model(model_name, doc, 0);
  load_checkpoint(model, checkpoint_file);
  TripletDataset ds = load_dataset(data_file);
  EvalResult r = evaluate(model, ds);
  std::printf("top1=%.6f ce=%.6f n=%zu\n", r.top1, r.ce, ds.size());
  if (!common.out.empty()) {
    fs::path dir = ensure_out(common.out);
    write_text(dir / "eval.csv",
               "top1,ce,n\n" + fmt17(r.top1) + "," + fmt17(r.ce) + "," +
                   std::to_string(ds.size()) + "\n");
    write_run_json(dir, "eval", doc, common.effective_seed(),
                   {{"model", model_name},
                    {"checkpoint", checkpoint_file},
                    {"data", data_file}});
  }
  return 0;
}

int run_sweep_n(const CommonOpts& common) {
  ConfigDoc doc = common.load();
  const json& s = doc.j.at("sweep");
  auto cells = sweep_n(s.at("sizes").get<std::vector<std::size_t>>(),
                       s.at("seeds").get<std::vector<std::uint64_t>>(),
                       s.at("models").get<std::vector<std::string>>(), doc.train(),
                       doc.sweep_setup(), common.jobs);
  fs::path dir = ensure_out(common.out);
  write_text(dir / "sweep.csv", sweep_csv(cells));
  write_text(dir / "sweep_gap.csv", sweep_gap_csv(cells));
  write_run_json(dir, "sweep-n", doc, common.effective_seed(),
                 {{"jobs", common.jobs}});
  std::printf("%zu cells -> %s\n", cells.size(), (dir / "sweep.csv").string().c_str());
  return 0;
}

int run_sweep_xstar(const CommonOpts& common) {
  ConfigDoc doc = common.load();
  const json& s = doc.j.at("sweep");
  auto cells = sweep_xstar_fraction(s.at("fractions").get<std::vector<double>>(),
                                    s.at("seeds").get<std::vector<std::uint64_t>>(),
                                    s.at("n").get<std::size_t>(), doc.train(),
                                    doc.sweep_setup(), common.jobs);
  fs::path dir = ensure_out(common.out);
  write_text(dir / "sweep.csv", sweep_csv(cells));
  write_text(dir / "sweep_gap.csv", sweep_gap_csv(cells));
  write_run_json(dir, "sweep-xstar", doc, common.effective_seed(),
                 {{"jobs", common.jobs}});
  std::printf("%zu cells -> %s\n", cells.size(), (dir / "sweep.csv").string().c_str());
  return 0;
}

int run_diagnostics(const CommonOpts& common, const std::string& checkpoint_file,
                    const std::string& data_file) {
  ConfigDoc doc = common.load();
  Model model = build_lupi(doc.arch(), doc.dropout(), 0);
  load_checkpoint(model, checkpoint_file);
  TripletDataset ds = load_dataset(data_file);
  auto rows = variance_diagnostics(model, ds);
  std::string csv = diagnostics_csv(rows);
  if (common.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    fs::path dir = ensure_out(common.out);
    write_text(dir / "diagnostics.csv", csv);
    write_run_json(dir, "diagnostics", doc, common.effective_seed(),
                   {{"checkpoint", checkpoint_file}, {"data", data_file}});
  }
  return 0;
}

std::vector<ProbeLayer> parse_probe(const json& doc, Tensor& x) {
  std::vector<ProbeLayer> layers;
  for (const json& l : doc.at("layers")) {
    std::string type = l.at("type");
    if (type == "affine") {
      auto rows = l.at("W").get<std::vector<std::vector<double>>>();
      Tensor W({rows.size(), rows.at(0).size()});
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) W.at(r, c) = rows[r][c];
      layers.push_back({ProbeLayer::Type::kAffine, std::move(W), 0});
    } else if (type == "relu") {
      layers.push_back({ProbeLayer::Type::kRelu, Tensor(), 0});
    } else if (type == "maxpool") {
      layers.push_back({ProbeLayer::Type::kMaxPool, Tensor(),
                        l.at("width").get<std::size_t>()});
    } else {
      throw std::runtime_error("probe file: unknown layer type " + type);
    }
  }
  auto xv = doc.at("x").get<std::vector<double>>();
  x = Tensor({xv.size()}, xv);
  return layers;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heteroscedastic-dropout LUPI toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic triplet dataset");
  CommonOpts gen_common;
  gen_common.attach(gen_cmd, true);
  std::size_t gen_n = 1000;
  double gen_fraction = 1.0;
  gen_cmd->add_option("--n", gen_n, "number of records");
  gen_cmd->add_option("--fraction", gen_fraction, "fraction carrying x*");

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model");
  CommonOpts train_common;
  train_common.attach(train_cmd, true);
  std::string train_model = "lupi", train_data;
  double train_fraction = 1.0;
  train_cmd->add_option("--model", train_model, "lupi|noxstar|gdropout|multitask")
      ->check(CLI::IsMember({"lupi", "noxstar", "gdropout", "multitask"}));
  train_cmd->add_option("--data", train_data, "dataset JSON (default: generate)");
  train_cmd->add_option("--fraction", train_fraction, "x* fraction on the train split");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  CommonOpts eval_common;
  eval_common.attach(eval_cmd);
  std::string eval_model = "lupi", eval_ckpt, eval_data;
  eval_cmd->add_option("--model", eval_model, "model kind of the checkpoint")
      ->check(CLI::IsMember({"lupi", "noxstar", "gdropout", "multitask"}));
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint JSON")->required();
  eval_cmd->add_option("--data", eval_data, "dataset JSON")->required();

  // sweep-n / sweep-xstar
  auto* sweepn_cmd = app.add_subcommand("sweep-n", "sample-efficiency sweep");
  CommonOpts sweepn_common;
  sweepn_common.attach(sweepn_cmd, true);
  auto* sweepx_cmd = app.add_subcommand("sweep-xstar", "partial-PI sweep at fixed n");
  CommonOpts sweepx_common;
  sweepx_common.attach(sweepx_cmd, true);

  // diagnostics
  auto* diag_cmd = app.add_subcommand("diagnostics", "per-unit variance diagnostics");
  CommonOpts diag_common;
  diag_common.attach(diag_cmd);
  std::string diag_ckpt, diag_data;
  diag_cmd->add_option("--checkpoint", diag_ckpt, "LUPI checkpoint JSON")->required();
  diag_cmd->add_option("--data", diag_data, "dataset JSON")->required();

  // bounds
  auto* bounds_cmd = app.add_subcommand("bounds", "generalization-bound calculators");
  bounds_cmd->require_subcommand(1);

  auto* p1 = bounds_cmd->add_subcommand("prop1", "covering-number bound");
  CommonOpts p1_common;
  p1_common.attach(p1);
  Prop1Inputs p1_in{1.0, 0.0, 1.0, 1.0, 0.05, 100};
  p1->add_option("--lambda", p1_in.lambda_l)->required();
  p1->add_option("--eps", p1_in.eps)->required();
  p1->add_option("--L", p1_in.L)->required();
  p1->add_option("--K", p1_in.K)->required();
  p1->add_option("--delta", p1_in.delta)->required();
  p1->add_option("--n", p1_in.n)->required();

  auto* p2 = bounds_cmd->add_subcommand("prop2", "path-count bound");
  CommonOpts p2_common;
  p2_common.attach(p2);
  Prop2Inputs p2_in{1.0, 0.0, 1.0, 1.0, 1.0, 0.05, 100, 0.0};
  p2->add_option("--C", p2_in.C)->required();
  p2->add_option("--xi", p2_in.xi)->required();
  p2->add_option("--Mw", p2_in.M_w)->required();
  p2->add_option("--Mz", p2_in.M_z)->required();
  p2->add_option("--P", p2_in.P)->required();
  p2->add_option("--delta", p2_in.delta)->required();
  p2->add_option("--n", p2_in.n)->required();
  p2->add_option("--epsy", p2_in.eps_y)->required();

  auto* paths_cmd = bounds_cmd->add_subcommand("paths", "exhaustive path decomposition");
  CommonOpts paths_common;
  paths_common.attach(paths_cmd);
  std::string probe_file;
  paths_cmd->add_option("--probe", probe_file, "probe network JSON {layers, x}")
      ->required();

  auto* bern_cmd = bounds_cmd->add_subcommand("bernstein", "matrix Bernstein check");
  CommonOpts bern_common;
  bern_common.attach(bern_cmd);
  BernsteinConfig bern_cfg;
  bern_cmd->add_option("--d", bern_cfg.d);
  bern_cmd->add_option("--num", bern_cfg.num_matrices);
  bern_cmd->add_option("--R", bern_cfg.R);
  bern_cmd->add_option("--delta", bern_cfg.delta);
  bern_cmd->add_option("--trials", bern_cfg.trials);

  auto* cover_cmd = bounds_cmd->add_subcommand("cover", "hypercube covering number");
  CommonOpts cover_common;
  cover_common.attach(cover_cmd);
  std::size_t cover_dim = 1;
  double cover_diam = 1.0, cover_eps = 0.25;
  cover_cmd->add_option("--dim", cover_dim)->required();
  cover_cmd->add_option("--diameter", cover_diam)->required();
  cover_cmd->add_option("--eps", cover_eps)->required();

  auto* rf_cmd = bounds_cmd->add_subcommand("ratefit", "gap-vs-n rate diagnostic");
  CommonOpts rf_common;
  rf_common.attach(rf_cmd);
  std::string rf_gaps;
  rf_cmd->add_option("--gaps", rf_gaps, "sweep gap CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen_common, gen_n, gen_fraction);
    if (train_cmd->parsed())
      return run_train(train_common, train_model, train_data, train_fraction);
    if (eval_cmd->parsed()) return run_eval(eval_common, eval_model, eval_ckpt, eval_data);
    if (sweepn_cmd->parsed()) return run_sweep_n(sweepn_common);
    if (sweepx_cmd->parsed()) return run_sweep_xstar(sweepx_common);
    if (diag_cmd->parsed()) return run_diagnostics(diag_common, diag_ckpt, diag_data);

    if (p1->parsed()) {
      double v = prop1_bound(p1_in);
      std::printf("%.4f\n", v);
      maybe_write_bounds(p1_common, p1_common.load(), "prop1",
                         bounds_csv_row("prop1",
                                        {{"lambda", fmt17(p1_in.lambda_l)},
                                         {"eps", fmt17(p1_in.eps)},
                                         {"L", fmt17(p1_in.L)},
                                         {"K", fmt17(p1_in.K)},
                                         {"delta", fmt17(p1_in.delta)},
                                         {"n", std::to_string(p1_in.n)}},
                                        fmt17(v)));
      return 0;
    }
    if (p2->parsed()) {
      double v = prop2_bound(p2_in);
      std::printf("%.5f\n", v);
      maybe_write_bounds(p2_common, p2_common.load(), "prop2",
                         bounds_csv_row("prop2",
                                        {{"C", fmt17(p2_in.C)},
                                         {"xi", fmt17(p2_in.xi)},
                                         {"Mw", fmt17(p2_in.M_w)},
                                         {"Mz", fmt17(p2_in.M_z)},
                                         {"P", fmt17(p2_in.P)},
                                         {"delta", fmt17(p2_in.delta)},
                                         {"n", std::to_string(p2_in.n)},
                                         {"epsy", fmt17(p2_in.eps_y)}},
                                        fmt17(v)));
      return 0;
    }
    if (paths_cmd->parsed()) {
      std::ifstream f(probe_file);
      if (!f) throw std::runtime_error("cannot open probe file: " + probe_file);
      json doc = json::parse(f);
      Tensor x;
      auto layers = parse_probe(doc, x);
      PathEnumeration pe = enumerate_paths(layers, x);
      std::printf("P=%zu M_w=%.10g\n", pe.P, pe.M_w);
      std::printf("path_sum=");
      for (std::size_t i = 0; i < pe.path_sum.size(); ++i)
        std::printf("%s%.10g", i ? "," : "", pe.path_sum[i]);
      std::printf("\n");
      maybe_write_bounds(
          paths_common, paths_common.load(), "paths",
          bounds_csv_row("paths",
                         {{"probe", probe_file}, {"P", std::to_string(pe.P)},
                          {"Mw", fmt17(pe.M_w)}},
                         fmt17(pe.path_sum.size() ? pe.path_sum[0] : 0.0)));
      return 0;
    }
    if (bern_cmd->parsed()) {
      RngState rng(bern_common.effective_seed());
      BernsteinResult r = bernstein_check(bern_cfg, rng);
      std::printf("bound=%.6f violation_rate=%.6f gamma=%.6f\n", r.bound_value,
                  r.empirical_violation_rate, r.gamma);
      maybe_write_bounds(bern_common, bern_common.load(), "bernstein",
                         bounds_csv_row("bernstein",
                                        {{"d", std::to_string(bern_cfg.d)},
                                         {"num", std::to_string(bern_cfg.num_matrices)},
                                         {"R", fmt17(bern_cfg.R)},
                                         {"delta", fmt17(bern_cfg.delta)},
                                         {"trials", std::to_string(bern_cfg.trials)},
                                         {"violation_rate",
                                          fmt17(r.empirical_violation_rate)}},
                                        fmt17(r.bound_value)));
      return 0;
    }
    if (cover_cmd->parsed()) {
      std::uint64_t k = covering_number_grid(cover_dim, cover_diam, cover_eps);
      std::printf("%llu\n", static_cast<unsigned long long>(k));
      maybe_write_bounds(cover_common, cover_common.load(), "cover",
                         bounds_csv_row("cover",
                                        {{"dim", std::to_string(cover_dim)},
                                         {"diameter", fmt17(cover_diam)},
                                         {"eps", fmt17(cover_eps)}},
                                        std::to_string(k)));
      return 0;
    }
    if (rf_cmd->parsed()) {
      std::ifstream f(rf_gaps);
      if (!f) throw std::runtime_error("cannot open gap CSV: " + rf_gaps);
      std::stringstream ss;
      ss << f.rdbuf();
      auto fits = rate_fit(parse_gap_csv(ss.str()));
      std::ostringstream csv;
      for (const auto& [model, fit] : fits) {
        std::printf("%s slope=%.6f stderr=%.6f points=%zu\n", model.c_str(), fit.slope,
                    fit.stderr_, fit.points);
        csv << bounds_csv_row("ratefit",
                              {{"model", model},
                               {"points", std::to_string(fit.points)},
                               {"stderr", fmt17(fit.stderr_)}},
                              fmt17(fit.slope));
      }
      maybe_write_bounds(rf_common, rf_common.load(), "ratefit", csv.str());
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
