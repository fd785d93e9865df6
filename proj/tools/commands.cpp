#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dne/baseline.hpp"
#include "dne/data.hpp"
#include "dne/ensemble.hpp"
#include "dne/error.hpp"
#include "dne/es.hpp"
#include "dne/member_io.hpp"
#include "dne/network.hpp"
#include "dne/random.hpp"
#include "json.hpp"

namespace dne::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Option names that never reach the echoed config: they select files or
// workers, and must not change what a run produces.
constexpr std::string_view kNotEchoed[] = {"help", "config", "out", "threads"};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

std::string scalar_text(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_boolean()) return value.get<bool>() ? "true" : "false";
  if (value.is_number()) return value.dump();
  throw PreconditionError("config values must be strings, numbers, booleans, or arrays of those");
}

// Values in the JSON file fill every option the command line left unset.
void apply_config(CLI::App& sub, const std::string& path) {
  if (path.empty()) return;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config '" + path + "': " + e.what());
  }
  if (!doc.is_object()) throw FormatError("config '" + path + "' must hold a JSON object");
  for (const auto& [key, value] : doc.items()) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw PreconditionError("config '" + path + "': unknown key '" + key + "' for " + sub.get_name());
    }
    if (opt->count() > 0) continue;
    opt->clear();
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(scalar_text(v));
    } else {
      opt->add_result(scalar_text(value));
    }
    opt->run_callback();
  }
}

Json typed_scalar(const std::string& text) {
  std::int64_t i = 0;
  if (auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), i);
      ec == std::errc() && p == text.data() + text.size()) {
    return i;
  }
  std::uint64_t u = 0;
  if (auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), u);
      ec == std::errc() && p == text.data() + text.size()) {
    return u;
  }
  double d = 0;
  if (auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), d);
      ec == std::errc() && p == text.data() + text.size()) {
    return d;
  }
  if (text == "true") return true;
  if (text == "false") return false;
  return text;
}

// Fully resolved options of a subcommand, in registration order.
Json resolved_config(const CLI::App& sub) {
  Json doc = Json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (std::find(std::begin(kNotEchoed), std::end(kNotEchoed), name) != std::end(kNotEchoed)) continue;
    std::vector<std::string> values = opt->results();
    if (opt->count() == 0) {
      const std::string def = opt->get_default_str();
      values = def.empty() ? std::vector<std::string>{} : std::vector<std::string>{def};
    }
    if (opt->get_expected_max() > 1) {
      Json arr = Json::array();
      for (const auto& v : values) arr.push_back(typed_scalar(v));
      doc[name] = std::move(arr);
    } else if (values.empty()) {
      doc[name] = "";
    } else {
      doc[name] = typed_scalar(values.front());
    }
  }
  return doc;
}

void require_value(const CLI::App& sub, const std::string& option, const std::string& value) {
  if (value.empty()) throw PreconditionError(sub.get_name() + ": " + option + " is required");
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create directory '" + dir.string() + "'");
}

void clear_members(const fs::path& dir) {
  if (!fs::exists(dir)) return;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".dnew") fs::remove(entry.path());
  }
}

std::vector<fs::path> member_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".dnew") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

NetworkSpec parse_arch(const std::string& arch) {
  if (arch == "dual") return NetworkSpec::dual_branch();
  if (arch == "single") return NetworkSpec::single_branch();
  throw PreconditionError("unknown architecture '" + arch + "' (dual or single)");
}

Fold load_fold(const std::string& pool_a, const std::string& pool_b, int fold) {
  return crossfold(load_dataset(pool_a), load_dataset(pool_b), fold);
}

std::string curve_text(std::span<const CurveRecord> curve) {
  std::ostringstream out;
  write_curve_csv(out, curve);
  return out.str();
}

// ---------------------------------------------------------------- gen-data

struct GenData {
  CLI::App* app = nullptr;
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int n_tumor = 18;
  int n_normal = 18;
  int test_tumor = 15;
  int test_normal = 15;
  std::string phantom_params;
  double artifact_prob = PhantomParams{}.artifact_probability;
  double lesion_contrast = PhantomParams{}.lesion_contrast_scale;
  double noise_sigma = PhantomParams{}.noise_sigma;

  void add(CLI::App& root) {
    app = root.add_subcommand("gen-data", "Write the two phantom pools used for two-fold cross-validation");
    app->option_defaults()->always_capture_default();
    app->add_option("--config", config, "JSON file with option values");
    app->add_option("--out", out, "Output directory for pool_a.opr and pool_b.opr");
    app->add_option("--seed", seed, "Generator seed");
    app->add_option("--n-tumor", n_tumor, "Tumor samples in pool A")->check(CLI::NonNegativeNumber);
    app->add_option("--n-normal", n_normal, "Normal samples in pool A")->check(CLI::NonNegativeNumber);
    app->add_option("--test-tumor", test_tumor, "Tumor samples in pool B")->check(CLI::NonNegativeNumber);
    app->add_option("--test-normal", test_normal, "Normal samples in pool B")->check(CLI::NonNegativeNumber);
    app->add_option("--phantom-params", phantom_params, "JSON file with base phantom parameters");
    app->add_option("--artifact-prob", artifact_prob, "Chance that a normal sample carries a streak artifact");
    app->add_option("--lesion-contrast", lesion_contrast, "Scale of the humor-to-lesion contrast");
    app->add_option("--noise-sigma", noise_sigma, "Gaussian pixel noise");
  }

  int run() {
    apply_config(*app, config);
    require_value(*app, "--out", out);
    PhantomParams params = phantom_params.empty() ? PhantomParams{} : params_from_json(read_text(phantom_params));
    // Explicit knobs override the base file; without a file they are the defaults anyway.
    if (phantom_params.empty() || app->get_option("--artifact-prob")->count() > 0) {
      params.artifact_probability = artifact_prob;
    }
    if (phantom_params.empty() || app->get_option("--lesion-contrast")->count() > 0) {
      params.lesion_contrast_scale = lesion_contrast;
    }
    if (phantom_params.empty() || app->get_option("--noise-sigma")->count() > 0) {
      params.noise_sigma = noise_sigma;
    }
    params.seed = seed;
    validate_params(params);

    prepare_dir(out);
    const Dataset a = gen_dataset(params, n_tumor, n_normal, 0);
    const Dataset b = gen_dataset(params, test_tumor, test_normal, std::max(n_tumor, n_normal));
    const fs::path dir(out);
    save_dataset(a, dir / "pool_a.opr");
    save_dataset(b, dir / "pool_b.opr");
    write_text(dir / "config.json", resolved_config(*app).dump(2) + "\n");
    std::cout << "pool_a.opr " << a.size() << " samples checksum " << dataset_checksum(a) << '\n'
              << "pool_b.opr " << b.size() << " samples checksum " << dataset_checksum(b) << '\n';
    return kOk;
  }
};

// ---------------------------------------------------------------- train-es

struct TrainEs {
  CLI::App* app = nullptr;
  std::string config;
  std::string out;
  std::string pool_a;
  std::string pool_b;
  int fold = 1;
  std::string arch = "dual";
  EsConfig es;
  std::size_t keep_last = 0;
  int log_every = 0;

  void add(CLI::App& root) {
    app = root.add_subcommand("train-es", "Train with antithetic ES and harvest the ensemble");
    app->option_defaults()->always_capture_default();
    app->add_option("--config", config, "JSON file with option values");
    app->add_option("--out", out, "Run directory (config.json, curve.csv, members/)");
    app->add_option("--pool-a", pool_a, "Pool A dataset (OPR1)");
    app->add_option("--pool-b", pool_b, "Pool B dataset (OPR1)");
    app->add_option("--fold", fold, "1 trains on pool A, 2 on pool B")->check(CLI::IsMember({1, 2}));
    app->add_option("--arch", arch, "dual or single")->check(CLI::IsMember({"dual", "single"}));
    app->add_option("--alpha", es.alpha, "Learning rate");
    app->add_option("--mu", es.mu, "Perturbation magnitude");
    app->add_option("--pop-pairs", es.population_pairs, "Mirrored pairs per generation");
    app->add_option("--n-epochs", es.n_epochs, "Generation budget");
    app->add_option("--r-max", es.r_max, "Maximal training reward (0 = training set size)");
    app->add_option("--n-conv", es.n_conv, "Generations at r_max before stopping");
    app->add_option("--early-stop", es.early_stop, "Stop after n-conv generations at r_max");
    app->add_option("--keep-last", keep_last, "Keep only the newest N members (0 = all)");
    app->add_option("--seed", es.seed, "Top-level seed");
    app->add_option("--log-every", log_every, "Progress line on stderr every N generations (0 = quiet)");
    app->add_option("--threads", es.threads, "Evaluation workers")->check(CLI::PositiveNumber);
  }

  int run() {
    apply_config(*app, config);
    require_value(*app, "--out", out);
    require_value(*app, "--pool-a", pool_a);
    require_value(*app, "--pool-b", pool_b);
    validate(es);
    const Fold f = load_fold(pool_a, pool_b, fold);
    const NetworkSpec spec = parse_arch(arch);
    const NetworkObjective objective(spec, f.train, f.test);

    const fs::path dir(out);
    prepare_dir(dir / "members");
    clear_members(dir / "members");
    write_text(dir / "config.json", resolved_config(*app).dump(2) + "\n");

    DirectoryEnsemble sink(dir / "members", spec_id(spec));
    const TrainResult result = train_es(es, objective, &sink, [&](const CurveRecord& r) {
      if (log_every > 0 && r.generation % log_every == 0) {
        std::cerr << "generation " << r.generation << " train best " << r.train_best << " mean " << r.train_mean
                  << " val best " << r.val_best << " saved " << sink.saved_count() << '\n';
      }
    });
    write_text(dir / "curve.csv", curve_text(result.curve));

    if (keep_last > 0) {
      auto files = member_files(dir / "members");
      if (files.size() > keep_last) {
        for (std::size_t i = 0; i + keep_last < files.size(); ++i) fs::remove(files[i]);
      }
    }
    EnsembleMember final_model{result.weights, result.generations, objective.train_reward(result.weights.values),
                               objective.validation_reward(result.weights.values)};
    save_member(dir / "final.dnew", final_model, spec_id(spec));

    std::cout << "generations " << result.generations << " reached_r_max " << (result.reached_r_max ? 1 : 0)
              << " stopped_early " << (result.stopped_early ? 1 : 0) << " members_saved " << sink.saved_count()
              << '\n';
    return result.reached_r_max ? kOk : kBudgetExhausted;
  }
};

// ---------------------------------------------------------------- uq-report

struct UqReportCmd {
  CLI::App* app = nullptr;
  std::string config;
  std::string out;
  std::string members;
  std::string test;
  double threshold = kDefaultEntropyThreshold;
  std::string vote = "majority";
  std::size_t keep_last = 0;
  int threads = 1;

  void add(CLI::App& root) {
    app = root.add_subcommand("uq-report", "Score a test set with saved members and write the UQ report");
    app->option_defaults()->always_capture_default();
    app->add_option("--config", config, "JSON file with option values");
    app->add_option("--out", out, "Report path (JSON)");
    app->add_option("--members", members, "Directory of .dnew members");
    app->add_option("--test", test, "Test dataset (OPR1)");
    app->add_option("--threshold", threshold, "Entropy above which a prediction is uncertain")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--vote", vote, "majority or mean")->check(CLI::IsMember({"majority", "mean"}));
    app->add_option("--keep-last", keep_last, "Use only the newest N members (0 = all)");
    app->add_option("--threads", threads, "Scoring workers")->check(CLI::PositiveNumber);
  }

  int run() {
    apply_config(*app, config);
    require_value(*app, "--out", out);
    require_value(*app, "--members", members);
    require_value(*app, "--test", test);
    const auto files = member_files(members);
    if (files.empty()) throw PreconditionError("no .dnew members in '" + members + "'");
    const NetworkSpec spec = spec_from_id(load_member(files.front()).spec_id);
    const auto ensemble = dne::keep_last(load_members(members, spec), keep_last);
    const Dataset test_set = load_dataset(test);
    const VoteMode mode = vote == "mean" ? VoteMode::MeanProbability : VoteMode::Majority;
    const UqReport report = uq_report(ensemble, spec, test_set, threshold, mode, threads);
    write_text(out, report_to_json(report));
    std::cout << "members " << report.ensemble_size << " samples " << report.records.size() << " mean_entropy "
              << report.mean_entropy() << '\n';
    return kOk;
  }
};

// ---------------------------------------------------------------- train-sgd

struct TrainSgd {
  CLI::App* app = nullptr;
  std::string config;
  std::string out;
  std::string pool_a;
  std::string pool_b;
  int fold = 1;
  std::string arch = "dual";
  SgdConfig sgd;
  int log_every = 0;

  void add(CLI::App& root) {
    app = root.add_subcommand("train-sgd", "Train the dropout baseline with plain SGD");
    app->option_defaults()->always_capture_default();
    app->add_option("--config", config, "JSON file with option values");
    app->add_option("--out", out, "Run directory (config.json, curve.csv, weights.dnew)");
    app->add_option("--pool-a", pool_a, "Pool A dataset (OPR1)");
    app->add_option("--pool-b", pool_b, "Pool B dataset (OPR1)");
    app->add_option("--fold", fold, "1 trains on pool A, 2 on pool B")->check(CLI::IsMember({1, 2}));
    app->add_option("--arch", arch, "dual or single")->check(CLI::IsMember({"dual", "single"}));
    app->add_option("--lr", sgd.learning_rate, "Learning rate")->check(CLI::PositiveNumber);
    app->add_option("--epochs", sgd.epochs, "Full sweeps over the training set")->check(CLI::NonNegativeNumber);
    app->add_option("--dropout", sgd.dropout_rate, "Dropout rate after each branch's first linear layer");
    app->add_option("--stop-at-full", sgd.stop_at_full_accuracy, "Stop once training accuracy reaches 100%");
    app->add_option("--seed", sgd.seed, "Top-level seed");
    app->add_option("--log-every", log_every, "Progress line on stderr every N epochs (0 = quiet)");
  }

  int run() {
    apply_config(*app, config);
    require_value(*app, "--out", out);
    require_value(*app, "--pool-a", pool_a);
    require_value(*app, "--pool-b", pool_b);
    const Fold f = load_fold(pool_a, pool_b, fold);
    const NetworkSpec spec = parse_arch(arch).with_dropout(sgd.dropout_rate);

    const fs::path dir(out);
    prepare_dir(dir);
    write_text(dir / "config.json", resolved_config(*app).dump(2) + "\n");
    const SgdResult result = sgd_train(sgd, spec, f.train, [&](const SgdCurveRecord& r) {
      if (log_every > 0 && r.epoch % log_every == 0) {
        std::cerr << "epoch " << r.epoch << " loss " << r.mean_loss << " accuracy " << r.train_accuracy << '\n';
      }
    });
    std::ostringstream curve;
    write_sgd_curve_csv(curve, result.curve);
    write_text(dir / "curve.csv", curve.str());

    const EnsembleMember model{result.weights, static_cast<std::int64_t>(result.curve.size()),
                               fitness(spec, result.weights.values, f.train.samples),
                               fitness(spec, result.weights.values, f.test.samples)};
    save_member(dir / "weights.dnew", model, spec_id(spec));
    std::cout << "epochs " << result.curve.size() << " first_full_accuracy_epoch " << result.first_full_accuracy_epoch
              << " train_reward " << model.train_reward << '/' << f.train.size() << '\n';
    return result.first_full_accuracy_epoch >= 0 ? kOk : kBudgetExhausted;
  }
};

// ---------------------------------------------------------------- mc-report

struct McReport {
  CLI::App* app = nullptr;
  std::string config;
  std::string out;
  std::string weights;
  std::string test;
  double dropout = 0.5;
  McEnsembleConfig mc;
  std::uint64_t seed = 0;
  double threshold = kDefaultEntropyThreshold;

  void add(CLI::App& root) {
    app = root.add_subcommand("mc-report", "MC-dropout UQ report for a baseline model");
    app->option_defaults()->always_capture_default();
    app->add_option("--config", config, "JSON file with option values");
    app->add_option("--out", out, "Report path (JSON)");
    app->add_option("--weights", weights, "Baseline weights (.dnew)");
    app->add_option("--test", test, "Test dataset (OPR1)");
    app->add_option("--dropout", dropout, "Dropout rate used at inference");
    app->add_option("--n-passes", mc.n_passes, "Stochastic forward passes per sample")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Top-level seed");
    app->add_option("--threshold", threshold, "Entropy above which a prediction is uncertain")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--threads", mc.threads, "Scoring workers")->check(CLI::PositiveNumber);
  }

  int run() {
    apply_config(*app, config);
    require_value(*app, "--out", out);
    require_value(*app, "--weights", weights);
    require_value(*app, "--test", test);
    const DecodedMember d = load_member(weights);
    const NetworkSpec spec = spec_from_id(d.spec_id).with_dropout(dropout);
    const Dataset test_set = load_dataset(test);
    const UqReport report =
        mc_uq_report(d.member.weights, spec, test_set, mc, derive_seed(seed, "mc-dropout"), threshold);
    write_text(out, report_to_json(report));
    std::cout << "passes " << report.ensemble_size << " samples " << report.records.size() << " mean_entropy "
              << report.mean_entropy() << '\n';
    return kOk;
  }
};

// ---------------------------------------------------------------- export-curves

struct CsvTable {
  std::string header;
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  CsvTable t;
  if (!std::getline(in, t.header)) throw FormatError("'" + path.string() + "' is empty");
  const auto columns = static_cast<std::size_t>(std::count(t.header.begin(), t.header.end(), ',')) + 1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ',')) {
      double v = 0;
      auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || p != field.data() + field.size()) {
        throw FormatError("'" + path.string() + "': bad number '" + field + "'");
      }
      row.push_back(v);
    }
    if (row.size() != columns) throw FormatError("'" + path.string() + "': row has the wrong column count");
    t.rows.push_back(std::move(row));
  }
  return t;
}

struct ExportCurves {
  CLI::App* app = nullptr;
  std::string config;
  std::string out;
  std::vector<std::string> runs;

  void add(CLI::App& root) {
    app = root.add_subcommand("export-curves", "Average curve.csv files across runs, row by row");
    app->option_defaults()->always_capture_default();
    app->add_option("--config", config, "JSON file with option values");
    app->add_option("--out", out, "Output CSV");
    app->add_option("--runs", runs, "Run directories or curve CSV files");
  }

  int run() {
    apply_config(*app, config);
    require_value(*app, "--out", out);
    if (runs.empty()) throw PreconditionError("export-curves: --runs is required");
    std::vector<CsvTable> tables;
    for (const auto& r : runs) {
      const fs::path p = fs::is_directory(r) ? fs::path(r) / "curve.csv" : fs::path(r);
      tables.push_back(read_csv(p));
      if (tables.back().header != tables.front().header) {
        throw FormatError("'" + p.string() + "' has a different header than the first curve");
      }
    }
    // Rows are keyed by their first column; each key averages the runs that reached it.
    std::map<double, std::pair<std::vector<double>, int>> acc;
    for (const auto& t : tables) {
      for (const auto& row : t.rows) {
        auto& [sum, n] = acc[row.front()];
        if (sum.empty()) sum.assign(row.size() - 1, 0.0);
        for (std::size_t c = 1; c < row.size(); ++c) sum[c - 1] += row[c];
        ++n;
      }
    }
    std::ostringstream csv;
    csv << tables.front().header << ",runs\n";
    char buf[64];
    for (const auto& [key, entry] : acc) {
      const auto& [sum, n] = entry;
      std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(key));
      csv << buf;
      for (double s : sum) {
        std::snprintf(buf, sizeof buf, ",%.6f", s / n);
        csv << buf;
      }
      csv << ',' << n << '\n';
    }
    write_text(out, csv.str());
    std::cout << "rows " << acc.size() << " runs " << tables.size() << '\n';
    return kOk;
  }
};

}  // namespace

struct Commands::State {
  GenData gen_data;
  TrainEs train_es;
  UqReportCmd uq_report;
  TrainSgd train_sgd;
  McReport mc_report;
  ExportCurves export_curves;
};

Commands::Commands(CLI::App& app) : state_(std::make_unique<State>()) {
  state_->gen_data.add(app);
  state_->train_es.add(app);
  state_->uq_report.add(app);
  state_->train_sgd.add(app);
  state_->mc_report.add(app);
  state_->export_curves.add(app);
}

Commands::~Commands() = default;

int Commands::run() {
  State& s = *state_;
  if (s.gen_data.app->parsed()) return s.gen_data.run();
  if (s.train_es.app->parsed()) return s.train_es.run();
  if (s.uq_report.app->parsed()) return s.uq_report.run();
  if (s.train_sgd.app->parsed()) return s.train_sgd.run();
  if (s.mc_report.app->parsed()) return s.mc_report.run();
  if (s.export_curves.app->parsed()) return s.export_curves.run();
  throw PreconditionError("no subcommand selected");
}

}  // namespace dne::cli
