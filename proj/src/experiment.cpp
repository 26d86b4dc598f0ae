#include "owmmd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace owmmd {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::ConfigError, field + ": " + what);
}

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> known) {
  if (!obj.is_object()) config_error(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      config_error(path.empty() ? key : path + "." + key, "unknown field");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, const std::string& path, T& out) {
  if (!obj.contains(key)) return;
  const std::string field = path + "." + key;
  const json& v = obj.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) config_error(field, "expected a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) config_error(field, "expected a number");
    out = v.get<T>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) config_error(field, "expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_unsigned()) {
        out = v.get<T>();
      } else if (v.get<std::int64_t>() < 0) {
        config_error(field, "must be >= 0");
      } else {
        out = static_cast<T>(v.get<std::int64_t>());
      }
    } else {
      out = static_cast<T>(v.get<std::int64_t>());
    }
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) config_error(field, "expected a string");
    out = v.get<std::string>();
  }
}

template <typename T>
std::vector<T> read_array(const json& obj, const char* key, const std::string& path, std::vector<T> fallback) {
  if (!obj.contains(key)) return fallback;
  const std::string field = path + "." + key;
  const json& v = obj.at(key);
  if (!v.is_array()) config_error(field, "expected an array");
  std::vector<T> out;
  for (const json& e : v) {
    if constexpr (std::is_floating_point_v<T>) {
      if (!e.is_number()) config_error(field, "expected numbers");
    } else {
      if (!e.is_number_integer()) config_error(field, "expected integers");
    }
    out.push_back(e.get<T>());
  }
  return out;
}

template <typename E>
E read_enum(const json& obj, const char* key, const std::string& path, E fallback,
            std::initializer_list<std::pair<const char*, E>> names) {
  if (!obj.contains(key)) return fallback;
  std::string s;
  read(obj, key, path, s);
  for (const auto& [name, value] : names) {
    if (s == name) return value;
  }
  std::string allowed;
  for (const auto& [name, _] : names) allowed += (allowed.empty() ? "" : "|") + std::string(name);
  config_error(path + "." + key, "unknown value '" + s + "' (expected " + allowed + ")");
}

const json& section(const json& doc, const char* key) {
  static const json empty = json::object();
  return doc.contains(key) ? doc.at(key) : empty;
}

RunSettings parse_settings(const json& doc) {
  RunSettings s;

  const json& st = section(doc, "stream");
  reject_unknown(st, "stream",
                 {"generator", "num_tasks", "classes_per_task", "train_per_class", "test_per_class", "input_dim",
                  "noise_scale", "seed", "dataset_file", "train_fraction"});
  s.stream.generator = read_enum(st, "generator", "stream", s.stream.generator,
                                 {{"gaussian_blobs", Generator::gaussian_blobs},
                                  {"two_moons_rotations", Generator::two_moons_rotations},
                                  {"grid_patterns", Generator::grid_patterns}});
  read(st, "num_tasks", "stream", s.stream.num_tasks);
  read(st, "classes_per_task", "stream", s.stream.classes_per_task);
  read(st, "train_per_class", "stream", s.stream.train_per_class);
  read(st, "test_per_class", "stream", s.stream.test_per_class);
  read(st, "input_dim", "stream", s.stream.input_dim);
  read(st, "noise_scale", "stream", s.stream.noise_scale);
  read(st, "seed", "stream", s.stream.seed);
  if (st.contains("dataset_file") && !st.at("dataset_file").is_null()) {
    std::string path;
    read(st, "dataset_file", "stream", path);
    s.dataset_file = path;
  }
  read(st, "train_fraction", "stream", s.train_fraction);

  const json& md = section(doc, "model");
  reject_unknown(md, "model", {"feature_widths"});
  s.model.feature_widths = read_array<Eigen::Index>(md, "feature_widths", "model", s.model.feature_widths);

  const json& hp = section(doc, "hyper");
  reject_unknown(hp, "hyper",
                 {"alpha", "beta", "gamma", "eta", "batch_size", "buffer_capacity", "epochs_per_task", "seed"});
  read(hp, "alpha", "hyper", s.hyper.alpha);
  read(hp, "beta", "hyper", s.hyper.beta);
  read(hp, "gamma", "hyper", s.hyper.gamma);
  read(hp, "eta", "hyper", s.hyper.eta);
  read(hp, "batch_size", "hyper", s.hyper.batch_size);
  read(hp, "buffer_capacity", "hyper", s.hyper.buffer_capacity);
  read(hp, "epochs_per_task", "hyper", s.hyper.epochs_per_task);
  read(hp, "seed", "hyper", s.hyper.seed);

  const json& rg = section(doc, "regularizer");
  reject_unknown(rg, "regularizer", {"distance", "kernel", "adaptive", "layer_mask"});
  s.regularizer = RegularizerConfig::all_layers(s.model.feature_widths.size());
  s.regularizer.distance = read_enum(rg, "distance", "regularizer", s.regularizer.distance,
                                     {{"mmd", DistanceKind::mmd}, {"l2", DistanceKind::l2}, {"cosine", DistanceKind::cosine}});
  read(rg, "adaptive", "regularizer", s.regularizer.adaptive);
  s.regularizer.layer_mask = read_array<int>(rg, "layer_mask", "regularizer", s.regularizer.layer_mask);
  const json& kn = section(rg, "kernel");
  reject_unknown(kn, "regularizer.kernel", {"kind", "bandwidths", "bandwidth_mode"});
  KernelSpec& k = s.regularizer.kernel;
  k.kind = read_enum(kn, "kind", "regularizer.kernel", k.kind, {{"rbf", KernelKind::rbf}, {"linear", KernelKind::linear}});
  k.bandwidths = read_array<double>(kn, "bandwidths", "regularizer.kernel", k.bandwidths);
  k.bandwidth_mode = read_enum(kn, "bandwidth_mode", "regularizer.kernel", k.bandwidth_mode,
                               {{"fixed", BandwidthMode::fixed}, {"median_heuristic", BandwidthMode::median_heuristic}});
  return s;
}

std::vector<std::string> validate_settings(const RunSettings& s) {
  std::vector<std::string> v;
  if (!s.dataset_file) {
    for (auto& m : validate(s.stream)) v.push_back(std::move(m));
  } else {
    if (s.stream.classes_per_task < 1) v.emplace_back("stream.classes_per_task: must be >= 1");
    if (!(s.train_fraction > 0.0 && s.train_fraction < 1.0)) v.emplace_back("stream.train_fraction: must lie in (0, 1)");
  }
  for (auto& m : validate(s.hyper)) {
    if (m.starts_with("hyper.batch_size") && s.regularizer.distance == DistanceKind::mmd) {
      m = "hyper.batch_size: must be >= 2 (the unbiased MMD estimator divides by N(N-1), so N >= 2)";
    }
    v.push_back(std::move(m));
  }
  if (s.model.feature_widths.empty()) v.emplace_back("model.feature_widths: need at least one feature layer");
  for (Eigen::Index w : s.model.feature_widths) {
    if (w < 1) {
      v.emplace_back("model.feature_widths: widths must be >= 1");
      break;
    }
  }
  const auto k = static_cast<int>(s.model.feature_widths.size());
  if (s.regularizer.layer_mask.empty()) v.emplace_back("regularizer.layer_mask: must not be empty");
  for (int m : s.regularizer.layer_mask) {
    if (m < 1 || m > k) {
      v.push_back("regularizer.layer_mask: entry " + std::to_string(m) + " outside 1.." + std::to_string(k));
    }
  }
  const KernelSpec& kn = s.regularizer.kernel;
  if (kn.kind == KernelKind::rbf) {
    if (kn.bandwidths.empty() && kn.bandwidth_mode == BandwidthMode::fixed) {
      v.emplace_back("regularizer.kernel.bandwidths: fixed rbf kernel needs at least one bandwidth");
    }
    for (double b : kn.bandwidths) {
      if (!(b > 0.0) || !std::isfinite(b)) {
        v.emplace_back("regularizer.kernel.bandwidths: must be positive");
        break;
      }
    }
  }
  return v;
}

std::string fmt(double v, int precision) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot write " + tmp.string());
    out << content;
    out.flush();
    require(out.good(), ErrorCode::IoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::IoError, "cannot move " + tmp.string() + " into place: " + ec.message());
}

std::vector<TaskDataset> build_stream(const RunSettings& s) {
  if (!s.dataset_file) return generate(s.stream);
  const ColumnarDataset data = load_columnar(*s.dataset_file);
  return split_into_tasks(data.samples, data.num_classes, s.stream.classes_per_task, s.train_fraction);
}

}  // namespace

json default_config_json() {
  const StreamSpec st;
  const HyperParams hp;
  const ModelSpec md;
  const KernelSpec kn = KernelSpec::rbf_mixture();
  json doc = {
      {"stream",
       {{"generator", "gaussian_blobs"},
        {"num_tasks", st.num_tasks},
        {"classes_per_task", st.classes_per_task},
        {"train_per_class", st.train_per_class},
        {"test_per_class", st.test_per_class},
        {"input_dim", st.input_dim},
        {"noise_scale", st.noise_scale},
        {"seed", st.seed}}},
      {"model", {{"feature_widths", md.feature_widths}}},
      {"hyper",
       {{"alpha", hp.alpha},
        {"beta", hp.beta},
        {"gamma", hp.gamma},
        {"eta", hp.eta},
        {"batch_size", hp.batch_size},
        {"buffer_capacity", hp.buffer_capacity},
        {"epochs_per_task", hp.epochs_per_task},
        {"seed", hp.seed}}},
      {"regularizer",
       {{"distance", "mmd"},
        {"adaptive", true},
        {"layer_mask", json::array({1, 2, 3, 4, 5})},
        {"kernel", {{"kind", "rbf"}, {"bandwidths", kn.bandwidths}, {"bandwidth_mode", "median_heuristic"}}}}},
      {"variants",
       json::array({json{{"name", "owmmd"}, {"overrides", json::object()}},
                    json{{"name", "derpp"}, {"overrides", {{"hyper", {{"gamma", 0.0}}}}}}})},
      {"num_seeds", 10},
      {"output_dir", "owmmd_out"}};
  return doc;
}

ExperimentConfig parse_config(const json& doc) {
  reject_unknown(doc, "", {"stream", "model", "hyper", "regularizer", "variants", "num_seeds", "output_dir"});
  ExperimentConfig cfg;
  cfg.base = doc;
  cfg.base.erase("variants");
  cfg.base.erase("num_seeds");
  cfg.base.erase("output_dir");
  read(doc, "num_seeds", "", cfg.num_seeds);
  std::string out = cfg.output_dir.string();
  read(doc, "output_dir", "", out);
  cfg.output_dir = out;
  if (doc.contains("variants")) {
    const json& vs = doc.at("variants");
    if (!vs.is_array()) config_error("variants", "expected an array");
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const std::string path = "variants[" + std::to_string(i) + "]";
      const json& v = vs[i];
      reject_unknown(v, path, {"name", "overrides"});
      Variant var;
      if (!v.contains("name")) config_error(path + ".name", "missing");
      read(v, "name", path, var.name);
      if (v.contains("overrides")) {
        if (!v.at("overrides").is_object()) config_error(path + ".overrides", "expected an object");
        var.overrides = v.at("overrides");
      }
      cfg.variants.push_back(std::move(var));
    }
  } else {
    cfg.variants.push_back(Variant{"default", json::object()});
  }
  parse_settings(cfg.base);
  for (const Variant& v : cfg.variants) resolve_variant(cfg, v);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

RunSettings resolve_variant(const ExperimentConfig& config, const Variant& variant) {
  json merged = config.base;
  merged.merge_patch(variant.overrides);
  try {
    return parse_settings(merged);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, "variant '" + variant.name + "': " + e.what());
  }
}

std::vector<std::string> validate(const ExperimentConfig& config) {
  std::vector<std::string> v;
  if (config.num_seeds < 1) v.emplace_back("num_seeds: must be >= 1");
  if (config.variants.empty()) v.emplace_back("variants: need at least one variant");
  std::set<std::string> names;
  for (const Variant& var : config.variants) {
    if (var.name.empty()) v.emplace_back("variants.name: must not be empty");
    if (!names.insert(var.name).second) v.push_back("variants.name: duplicate name '" + var.name + "'");
  }
  std::vector<std::string> base;
  try {
    base = validate_settings(parse_settings(config.base));
  } catch (const Error& e) {
    base.emplace_back(e.what());
  }
  v.insert(v.end(), base.begin(), base.end());
  for (const Variant& var : config.variants) {
    try {
      for (auto& m : validate_settings(resolve_variant(config, var))) {
        if (std::find(base.begin(), base.end(), m) == base.end()) v.push_back("variant '" + var.name + "': " + m);
      }
    } catch (const Error& e) {
      v.emplace_back(e.what());
    }
  }
  return v;
}

void select_variants(ExperimentConfig& config, const std::vector<std::string>& names) {
  std::vector<Variant> chosen;
  for (const std::string& n : names) {
    const auto it = std::find_if(config.variants.begin(), config.variants.end(),
                                 [&](const Variant& v) { return v.name == n; });
    if (it == config.variants.end()) config_error("variants", "no variant named '" + n + "'");
    chosen.push_back(*it);
  }
  config.variants = std::move(chosen);
}

void override_seed(ExperimentConfig& config, std::uint64_t seed) { config.base["hyper"]["seed"] = seed; }

RunRecord run_one(const ExperimentConfig& config, const Variant& variant, int run_index, const StepObserver& observer) {
  RunSettings s = resolve_variant(config, variant);
  const auto problems = validate_settings(s);
  require(problems.empty(), ErrorCode::ConfigError, problems.empty() ? "" : problems.front());
  const auto offset = static_cast<std::uint64_t>(run_index);
  s.hyper.seed += offset;
  s.stream.seed += offset;
  return RunRecord{variant.name, s.hyper.seed,
                   train_stream(build_stream(s), s.model, s.hyper, s.regularizer, observer)};
}

std::vector<RunRecord> run(const ExperimentConfig& config, unsigned threads) {
  const auto problems = validate(config);
  require(problems.empty(), ErrorCode::ConfigError, problems.empty() ? "" : problems.front());

  struct Job {
    std::size_t variant;
    int run_index;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < config.variants.size(); ++v) {
    for (int r = 0; r < config.num_seeds; ++r) jobs.push_back({v, r});
  }
  std::vector<std::optional<RunRecord>> slots(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        slots[j] = run_one(config, config.variants[jobs[j].variant], jobs[j].run_index);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<RunRecord> records;
  records.reserve(slots.size());
  for (auto& s : slots) records.push_back(std::move(*s));
  write_outputs(config, records);
  return records;
}

void write_outputs(const ExperimentConfig& config, const std::vector<RunRecord>& records) {
  std::error_code ec;
  std::filesystem::create_directories(config.output_dir, ec);
  require(!ec, ErrorCode::IoError, "cannot create " + config.output_dir.string() + ": " + ec.message());

  std::ostringstream metrics;
  metrics << "variant,seed,task,eval_task,accuracy,mode\n";
  std::ostringstream weights;
  std::size_t k = 0;
  for (const RunRecord& r : records) {
    if (!r.result.trajectory.empty()) k = std::max(k, r.result.trajectory.front().weights.size());
  }
  weights << "variant,seed,task,epoch";
  for (std::size_t i = 1; i <= k; ++i) weights << ",w" << i;
  weights << "\n";

  // (variant, mode) -> per-seed metric values, in first-seen variant order.
  std::vector<std::string> order;
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> agg;

  for (const RunRecord& r : records) {
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
    for (EvalMode mode : {EvalMode::class_il, EvalMode::task_il}) {
      const AccuracyMatrix& m = mode == EvalMode::class_il ? r.result.class_il : r.result.task_il;
      for (std::size_t i = 0; i < m.num_tasks(); ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          metrics << r.variant << ',' << r.seed << ',' << i + 1 << ',' << j + 1 << ',' << fmt(m.at(i, j), 10) << ','
                  << to_string(mode) << '\n';
        }
      }
      auto& [acc, bwt] = agg[{r.variant, to_string(mode)}];
      acc.push_back(average_accuracy(m));
      bwt.push_back(m.num_tasks() >= 2 ? backward_transfer(m) : std::nan(""));
    }
    for (const WeightRow& w : r.result.trajectory) {
      weights << r.variant << ',' << r.seed << ',' << w.task << ',' << w.epoch;
      for (double x : w.weights) weights << ',' << fmt(x, 17);
      weights << '\n';
    }
  }

  std::ostringstream summary;
  summary << "variant,mode,avg_acc_mean,avg_acc_std,bwt_mean,bwt_std\n";
  for (const std::string& v : order) {
    for (EvalMode mode : {EvalMode::class_il, EvalMode::task_il}) {
      const auto& [acc, bwt] = agg.at({v, to_string(mode)});
      const MeanStd a = aggregate(acc);
      const MeanStd b = std::isnan(bwt.front()) ? MeanStd{std::nan(""), std::nan("")} : aggregate(bwt);
      summary << v << ',' << to_string(mode) << ',' << fmt(a.mean, 10) << ',' << fmt(a.std, 10) << ','
              << fmt(b.mean, 10) << ',' << fmt(b.std, 10) << '\n';
    }
  }

  write_atomically(config.output_dir / "metrics.csv", metrics.str());
  write_atomically(config.output_dir / "summary.csv", summary.str());
  write_atomically(config.output_dir / "weights.csv", weights.str());
}

}  // namespace owmmd
