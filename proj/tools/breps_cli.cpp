#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/core/demangle.hpp>
#include <boost/version.hpp>
#include <nlohmann/json.hpp>

#include "breps/attack.hpp"
#include "breps/bridge.hpp"
#include "breps/data.hpp"
#include "breps/error.hpp"
#include "breps/metrics.hpp"
#include "breps/oracle.hpp"
#include "breps/parallel.hpp"
#include "breps/realism.hpp"
#include "breps/report_io.hpp"
#include "breps/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace breps::cli {
namespace {

// ---- logging ----

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("BREPS_LOG");
    const std::string v = env ? env : "";
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

// ---- shared options ----

struct Globals {
  std::uint64_t seed = 0;
  int workers = default_workers();
  std::string out;
  std::string corpus;  // defaults to --out
  std::string model = "toy";
  int timeout_ms = 30000;
  std::vector<std::string> instances;
};

void add_globals(CLI::App* sub, Globals& g, bool corpus_and_model) {
  sub->add_option("--seed", g.seed, "RNG seed")->capture_default_str();
  sub->add_option("--workers", g.workers, "Instance-level worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--out", g.out, "Output directory")->required();
  if (!corpus_and_model) return;
  sub->add_option("--corpus", g.corpus, "Corpus directory (default: --out)");
  sub->add_option("--model", g.model, "toy | bridge:stdio:<cmd> | bridge:tcp:<host>:<port>")
      ->capture_default_str();
  sub->add_option("--timeout-ms", g.timeout_ms, "Bridge request timeout")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--instance", g.instances, "Restrict to these image ids (repeatable)");
}

struct AttackFlags {
  double lambda = 0.1;
  int steps = 50;
  double lr = 9.0;
  std::string realism;
};

void add_attack_flags(CLI::App* sub, AttackFlags& f) {
  sub->add_option("--lambda", f.lambda, "Realism weight")->check(CLI::NonNegativeNumber)->capture_default_str();
  sub->add_option("--steps", f.steps, "Adam updates")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--lr", f.lr, "Learning rate at 1024 x 1024")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--realism", f.realism, "Realism JSON from fit-realism (default: built-in fit)");
}

GammaRealismModel load_realism(const std::string& path) {
  if (path.empty()) return {};
  try {
    return realism_from_json(json::parse(read_text_file(path)));
  } catch (const json::exception& e) {
    throw ParseError("realism file " + path + ": " + e.what(), 0);
  }
}

AttackConfig attack_config(const AttackFlags& f, const Globals& g) {
  AttackConfig cfg;
  cfg.lambda = f.lambda;
  cfg.steps = f.steps;
  cfg.base_lr = f.lr;
  cfg.seed = g.seed;
  cfg.realism = load_realism(f.realism);
  cfg.validate();
  return cfg;
}

std::vector<Instance> load_selected(const Globals& g) {
  const fs::path dir = g.corpus.empty() ? fs::path(g.out) : fs::path(g.corpus);
  std::vector<Instance> all = load_corpus(dir);
  if (g.instances.empty()) return all;
  std::vector<Instance> picked;
  for (const auto& id : g.instances) {
    auto it = std::find_if(all.begin(), all.end(), [&](const Instance& i) { return i.image_id == id; });
    if (it == all.end()) throw NotFound("instance '" + id + "' not in corpus " + dir.string());
    picked.push_back(*it);
  }
  return picked;
}

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory " + out.string());
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

void write_run_json(const fs::path& out, const std::string& subcommand,
                    const std::vector<std::string>& argv, const Globals& g, const json& config) {
  json versions = {
      {"breps", BREPS_VERSION},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"boost", BOOST_LIB_VERSION},
      {"cli11", CLI11_VERSION},
      {"compiler", __VERSION__},
  };
  json run = {
      {"subcommand", subcommand},
      {"argv", argv},
      {"seed", g.seed},
      {"workers", g.workers},
      {"config", config},
      {"versions", versions},
  };
  write_json(out / "run.json", run);
}

int model_workers(const SegModel& m, int workers) { return m.concurrent_safe() ? workers : 1; }

// ---- subcommands ----

void run_gen_corpus(const Globals& g, int n, int size) {
  const auto corpus = make_toy_corpus(n, size, g.seed);
  save_corpus(corpus, g.out);
  log(Level::info, "wrote " + std::to_string(corpus.size()) + " instances to " + g.out);
}

void run_fit_realism(const Globals& g, const std::string& samples_path, double x_clamp) {
  const auto samples = parse_ciou_samples(read_text_file(samples_path));
  const GammaRealismModel m = fit_gamma(samples, x_clamp);
  write_json(fs::path(g.out) / "realism.json", to_json(m));
  std::cout << "k=" << format_double(m.k) << " theta=" << format_double(m.theta) << '\n';
}

struct SampleFlags {
  int n = 1000;
  std::string method = "mala";
  double step = kDefaultMalaStep;
  int burn_in = 500;
  int thin = 50;
  double jitter = 0.3;
  std::string realism;
};

void run_sample(const Globals& g, const SampleFlags& f) {
  const GammaRealismModel realism = load_realism(f.realism);
  realism.validate();
  const auto instances = load_selected(g);
  std::vector<std::vector<BBox>> boxes(instances.size());
  std::vector<json> stats(instances.size());
  parallel_for(instances.size(), g.workers, [&](std::size_t i) {
    const Instance& inst = instances[i];
    const std::uint64_t seed = g.seed ^ fnv1a64(inst.image_id);
    const double diag = std::hypot(inst.tight.width(), inst.tight.height());
    json s = {{"image_id", inst.image_id}};
    if (f.method == "mala") {
      MalaOptions opt;
      opt.step = f.step * diag;
      opt.burn_in = f.burn_in;
      opt.thin = f.thin;
      auto r = mala_sample(realism, inst.tight, inst.width, inst.height, f.n, opt, seed);
      s["acceptance_rate"] = r.acceptance_rate;
      s["step"] = r.step;
      boxes[i] = std::move(r.samples);
    } else {
      boxes[i] = jitter_baseline(inst.tight, f.jitter, f.n, inst.width, inst.height, seed);
    }
    std::vector<double> losses;
    double mean_lp = 0;
    for (const auto& b : boxes[i]) {
      losses.push_back(ciou_loss(b, inst.tight).total);
      mean_lp += box_log_pdf(realism, b, inst.tight);
    }
    const auto ks = ks_test_1d(losses, [&](double x) { return gamma_cdf(realism, x); });
    s["ks_statistic"] = ks.statistic;
    s["ks_p_value"] = ks.p_value;
    s["mean_log_pdf"] = mean_lp / static_cast<double>(boxes[i].size());
    stats[i] = std::move(s);
  });
  std::vector<LabeledBox> rows;
  for (std::size_t i = 0; i < instances.size(); ++i)
    for (const auto& b : boxes[i]) rows.push_back({instances[i].image_id, b});
  write_text_file(fs::path(g.out) / "samples.csv", format_boxes_csv(rows));
  write_json(fs::path(g.out) / "sample_stats.json", json(stats));
}

void run_attack(const Globals& g, const AttackFlags& f, const std::string& mode) {
  AttackConfig cfg = attack_config(f, g);
  cfg.mode = parse_attack_mode(mode);
  const auto instances = load_selected(g);
  auto model = make_model(g.model, g.timeout_ms);
  const fs::path dir = fs::path(g.out) / "attacks";
  prepare_out(dir);
  std::vector<AttackSummaryRow> rows(instances.size());
  parallel_for(instances.size(), model_workers(*model, g.workers), [&](std::size_t i) {
    const Instance& inst = instances[i];
    const AttackResult r = breps_attack(*model, inst, cfg);
    const double tight = r.trajectory.front().iou;
    write_json(dir / (inst.image_id + "_" + mode + ".json"), to_json(r, inst.image_id, tight));
    rows[i] = {inst.image_id, cfg.mode, tight, r.final_iou, r.final_log_pdf};
    log(Level::debug, inst.image_id + ": iou " + format_double(tight) + " -> " + format_double(r.final_iou));
  });
  write_text_file(fs::path(g.out) / "attacks.csv", format_attack_csv(rows));
}

void run_sweep_lambda(const Globals& g, const AttackFlags& f, const std::vector<double>& lambdas) {
  const AttackConfig cfg = attack_config(f, g);
  const auto instances = load_selected(g);
  auto model = make_model(g.model, g.timeout_ms);
  const auto rows = sweep_lambda(*model, instances, lambdas, cfg, g.workers);
  write_text_file(fs::path(g.out) / "lambda_sweep.csv", format_lambda_csv(rows));
}

void run_heatmap(const Globals& g, const std::string& id, int stride, bool png, bool full) {
  Globals one = g;
  one.instances = {id};
  const Instance inst = load_selected(one).front();
  auto model = make_model(g.model, g.timeout_ms);
  const int workers = model_workers(*model, g.workers);
  const auto sweep = exhaustive_centered(*model, inst, stride, workers);
  const fs::path stem = fs::path(g.out) / ("heatmap_" + id);
  render_heatmap(sweep.heatmap, stem, png);
  json summary = to_json(sweep);
  summary["image_id"] = id;
  if (full) {
    const auto f = exhaustive_full(*model, inst, stride, kDefaultFullSweepBudget, workers);
    summary["full"] = {{"min", {{"bbox", to_json(f.min.bbox)}, {"iou", f.min.iou}}},
                       {"max", {{"bbox", to_json(f.max.bbox)}, {"iou", f.max.iou}}},
                       {"evaluations", f.evaluations}};
  }
  write_json(stem.string() + ".json", summary);
}

void run_evaluate(const Globals& g, const std::string& annotations_path) {
  const auto annotations = load_annotations(annotations_path);
  const auto corpus = load_selected(g);
  std::set<std::string> wanted;
  for (const auto& a : annotations) wanted.insert(a.image_id);
  std::vector<Instance> instances;
  for (const auto& inst : corpus)
    if (wanted.count(inst.image_id)) instances.push_back(inst);
  std::set<std::string> known;
  for (const auto& inst : instances) known.insert(inst.image_id);
  std::size_t unmatched = 0;
  for (const auto& a : annotations) unmatched += known.count(a.image_id) ? 0 : 1;
  if (unmatched) log(Level::warn, std::to_string(unmatched) + " annotations name images outside the corpus");
  if (instances.empty()) throw NotFound("no annotated image is in the corpus");

  auto model = make_model(g.model, g.timeout_ms);
  const DatasetSpread d = dataset_spread(*model, instances, annotations, model_workers(*model, g.workers));
  write_text_file(fs::path(g.out) / "user_spread.csv", format_user_spread_csv(d));

  std::vector<double> desktop, mobile;
  for (const auto& row : d.rows)
    for (const auto& u : row.users) (u.device == Device::desktop ? desktop : mobile).push_back(u.iou);
  json summary = {{"instances", d.rows.size()},
                  {"annotations", annotations.size() - unmatched},
                  {"unmatched_annotations", unmatched},
                  {"mean_of_means", d.mean_of_means},
                  {"mean_of_stds", d.mean_of_stds},
                  {"device_u_test", nullptr}};
  if (!desktop.empty() && !mobile.empty()) {
    const auto u = u_test(desktop, mobile);
    summary["device_u_test"] = {{"u", u.statistic}, {"p_value", u.p_value},
                                {"n_desktop", u.n_a}, {"n_mobile", u.n_b}};
  }
  write_json(fs::path(g.out) / "user_spread.json", summary);
}

void run_report(const Globals& g, const AttackFlags& f) {
  const AttackConfig cfg = attack_config(f, g);
  const auto instances = load_selected(g);
  auto model = make_model(g.model, g.timeout_ms);
  const RobustnessReport r = robustness_report(*model, instances, cfg, g.workers);
  for (const auto& id : r.failed) log(Level::warn, "attack failed on " + id);
  write_text_file(fs::path(g.out) / "robustness.csv", format_robustness_csv(r));
  write_json(fs::path(g.out) / "robustness.json", to_json(r));
  std::cout << "n=" << r.rows.size() << " tight=" << format_double(r.mean_tight)
            << " min=" << format_double(r.mean_min) << " max=" << format_double(r.mean_max)
            << " delta=" << format_double(r.mean_delta) << '\n';
}

json attack_flags_json(const AttackFlags& f) {
  return {{"lambda", f.lambda}, {"steps", f.steps}, {"lr", f.lr}, {"realism", f.realism}};
}

int run(int argc, char** argv) {
  CLI::App app{"Bounding-box prompt robustness evaluation"};
  app.require_subcommand(1);
  Globals g;
  std::function<void()> action;
  json config;

  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic toy corpus to --out");
  int n = 50, size = 64;
  gen->add_option("--n", n, "Number of instances")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--size", size, "Image side in pixels")->check(CLI::Range(8, 4096))->capture_default_str();
  add_globals(gen, g, false);
  gen->callback([&] {
    config = {{"n", n}, {"size", size}};
    action = [&] { run_gen_corpus(g, n, size); };
  });

  auto* fit = app.add_subcommand("fit-realism", "Fit the Gamma realism model to CIoU-loss samples");
  std::string samples_path;
  double x_clamp = 1e-4;
  fit->add_option("--samples", samples_path, "CSV with a ciou_loss column")->required();
  fit->add_option("--x-clamp", x_clamp, "Lower clamp on the CIoU loss")->check(CLI::PositiveNumber)->capture_default_str();
  add_globals(fit, g, false);
  fit->callback([&] {
    config = {{"samples", samples_path}, {"x_clamp", x_clamp}};
    action = [&] { run_fit_realism(g, samples_path, x_clamp); };
  });

  auto* sample = app.add_subcommand("sample", "Draw realistic boxes around each tight box");
  SampleFlags sf;
  sample->add_option("--n", sf.n, "Boxes per instance")->check(CLI::PositiveNumber)->capture_default_str();
  sample->add_option("--method", sf.method, "mala | jitter")->check(CLI::IsMember({"mala", "jitter"}))->capture_default_str();
  sample->add_option("--step", sf.step, "MALA step as a fraction of the tight-box diagonal")->check(CLI::PositiveNumber)->capture_default_str();
  sample->add_option("--burn-in", sf.burn_in, "MALA burn-in states")->check(CLI::NonNegativeNumber)->capture_default_str();
  sample->add_option("--thin", sf.thin, "Keep every n-th MALA state")->check(CLI::PositiveNumber)->capture_default_str();
  sample->add_option("--jitter", sf.jitter, "Jitter fraction of the side length")->check(CLI::NonNegativeNumber)->capture_default_str();
  sample->add_option("--realism", sf.realism, "Realism JSON (default: built-in fit)");
  add_globals(sample, g, true);
  sample->callback([&] {
    config = {{"n", sf.n}, {"method", sf.method}, {"step", sf.step}, {"burn_in", sf.burn_in},
              {"thin", sf.thin}, {"jitter", sf.jitter}, {"realism", sf.realism}};
    action = [&] { run_sample(g, sf); };
  });

  auto* attack = app.add_subcommand("attack", "Run the gradient attack on every instance");
  AttackFlags af;
  std::string mode = "min";
  attack->add_option("--mode", mode, "min | max")->check(CLI::IsMember({"min", "max"}))->capture_default_str();
  add_attack_flags(attack, af);
  add_globals(attack, g, true);
  attack->callback([&] {
    config = attack_flags_json(af);
    config["mode"] = mode;
    action = [&] { run_attack(g, af, mode); };
  });

  auto* sweep = app.add_subcommand("sweep-lambda", "Mean IoU delta and log-PDF per realism weight");
  AttackFlags swf;
  std::vector<double> lambdas{0, 0.01, 0.1, 1};
  sweep->add_option("--lambdas", lambdas, "Comma-separated realism weights")->delimiter(',')->capture_default_str();
  add_attack_flags(sweep, swf);
  add_globals(sweep, g, true);
  sweep->callback([&] {
    config = attack_flags_json(swf);
    config["lambdas"] = lambdas;
    action = [&] { run_sweep_lambda(g, swf, lambdas); };
  });

  auto* heat = app.add_subcommand("heatmap", "Exhaustive centered sweep of one instance");
  std::string heat_id;
  int stride = 1;
  bool no_png = false, full = false;
  heat->add_option("--instance", heat_id, "Image id")->required();
  heat->add_option("--stride", stride, "Offset step in pixels")->check(CLI::PositiveNumber)->capture_default_str();
  heat->add_flag("--no-png", no_png, "Skip the PNG rendering");
  heat->add_flag("--full", full, "Also run the full integer-grid sweep");
  add_globals(heat, g, false);
  heat->add_option("--corpus", g.corpus, "Corpus directory (default: --out)");
  heat->add_option("--model", g.model, "toy | bridge:...")->capture_default_str();
  heat->add_option("--timeout-ms", g.timeout_ms, "Bridge request timeout")->check(CLI::PositiveNumber);
  heat->callback([&] {
    config = {{"instance", heat_id}, {"stride", stride}, {"png", !no_png}, {"full", full}};
    action = [&] { run_heatmap(g, heat_id, stride, !no_png, full); };
  });

  auto* eval = app.add_subcommand("evaluate", "Model IoU spread over user-drawn boxes");
  std::string annotations;
  eval->add_option("--annotations", annotations, "CSV image_id,user_id,device,x1,y1,x2,y2")->required();
  add_globals(eval, g, true);
  eval->callback([&] {
    config = {{"annotations", annotations}};
    action = [&] { run_evaluate(g, annotations); };
  });

  auto* report = app.add_subcommand("report", "Tight, min and max IoU per instance");
  AttackFlags rf;
  add_attack_flags(report, rf);
  add_globals(report, g, true);
  report->callback([&] {
    config = attack_flags_json(rf);
    action = [&] { run_report(g, rf); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  const std::string subcommand = app.get_subcommands().front()->get_name();
  config["model"] = g.model;
  config["corpus"] = g.corpus;
  config["instances"] = g.instances;
  config["timeout_ms"] = g.timeout_ms;
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    prepare_out(g.out);
    write_run_json(g.out, subcommand, args, g, config);
    action();
  } catch (const Error& e) {
    std::cerr << "error: " << boost::core::demangle(typeid(e).name()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace
}  // namespace breps::cli

int main(int argc, char** argv) {
  try {
    return breps::cli::run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << '\n';
    return 1;
  }
}
