#include "owmmd/taskstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace owmmd {

namespace {

// Ratio of prototype spread to within-class noise for the blob generator.
constexpr double kBlobSpread = 1.25;
constexpr double kMinSeparation = 4.0;  // in units of noise_scale
constexpr int kMaxAttempts = 1000;

using Vec = Eigen::VectorXd;

Vec gaussian_vector(int d, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, scale);
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = n(rng);
  return v;
}

double min_pairwise_distance(const std::vector<Vec>& points) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) best = std::min(best, (points[i] - points[j]).norm());
  }
  return best;
}

// A class is described by a sampler of noise-free points; its prototype is
// the mean of that sampler.
struct ClassShape {
  std::function<Vec(std::mt19937_64&)> draw;
  Vec prototype;
};

std::vector<ClassShape> blob_classes(const StreamSpec& spec, std::mt19937_64& rng) {
  std::vector<ClassShape> out;
  for (int c = 0; c < spec.total_classes(); ++c) {
    Vec mean = gaussian_vector(spec.input_dim, kBlobSpread * spec.noise_scale, rng);
    out.push_back({[mean](std::mt19937_64&) { return mean; }, mean});
  }
  return out;
}

// Orthonormal 2-frame in R^d.
std::pair<Vec, Vec> random_plane(int d, std::mt19937_64& rng) {
  Vec u = gaussian_vector(d, 1.0, rng).normalized();
  Vec v = gaussian_vector(d, 1.0, rng);
  v -= v.dot(u) * u;
  return {u, v.normalized()};
}

std::vector<ClassShape> moon_classes(const StreamSpec& spec, std::mt19937_64& rng) {
  require(spec.classes_per_task == 2, ErrorCode::InvalidSpec, "two_moons_rotations needs classes_per_task == 2");
  std::vector<ClassShape> out;
  const double radius = 4.0 * spec.noise_scale;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (int t = 0; t < spec.num_tasks; ++t) {
    const auto [u, v] = random_plane(spec.input_dim, rng);
    const Vec offset = gaussian_vector(spec.input_dim, 2.0 * spec.noise_scale, rng);
    const double rot = angle(rng);
    for (int half = 0; half < 2; ++half) {
      auto point = [=](double s) {
        // Standard interleaved half circles, rotated in their plane.
        const double px = half == 0 ? std::cos(s) : 1.0 - std::cos(s);
        const double py = half == 0 ? std::sin(s) : 0.5 - std::sin(s);
        const double rx = std::cos(rot) * px - std::sin(rot) * py;
        const double ry = std::sin(rot) * px + std::cos(rot) * py;
        return Vec(offset + radius * (rx * u + ry * v));
      };
      Vec proto = Vec::Zero(spec.input_dim);
      constexpr int kGrid = 256;
      for (int i = 0; i < kGrid; ++i) proto += point(std::numbers::pi * (i + 0.5) / kGrid);
      proto /= kGrid;
      out.push_back({[point](std::mt19937_64& r) {
                       std::uniform_real_distribution<double> s(0.0, std::numbers::pi);
                       return point(s(r));
                     },
                     proto});
    }
  }
  return out;
}

std::vector<ClassShape> grid_classes(const StreamSpec& spec, std::mt19937_64& rng) {
  std::vector<ClassShape> out;
  const double amplitude = 2.0 * spec.noise_scale;
  std::bernoulli_distribution bit(0.5);
  for (int c = 0; c < spec.total_classes(); ++c) {
    Vec pattern(spec.input_dim);
    for (int i = 0; i < spec.input_dim; ++i) pattern(i) = bit(rng) ? amplitude : 0.0;
    out.push_back({[pattern](std::mt19937_64&) { return pattern; }, pattern});
  }
  return out;
}

}  // namespace

std::vector<std::string> validate(const StreamSpec& spec) {
  std::vector<std::string> v;
  if (spec.num_tasks < 1) v.emplace_back("stream.num_tasks: must be >= 1");
  if (spec.classes_per_task < 1) v.emplace_back("stream.classes_per_task: must be >= 1");
  if (spec.train_per_class < 1) v.emplace_back("stream.train_per_class: must be >= 1");
  if (spec.test_per_class < 1) v.emplace_back("stream.test_per_class: must be >= 1");
  if (spec.input_dim < 1) v.emplace_back("stream.input_dim: must be >= 1");
  if (!(spec.noise_scale > 0.0) || !std::isfinite(spec.noise_scale)) {
    v.emplace_back("stream.noise_scale: must be a positive finite number");
  }
  if (spec.generator == Generator::two_moons_rotations && spec.classes_per_task != 2) {
    v.emplace_back("stream.classes_per_task: two_moons_rotations requires exactly 2");
  }
  if (spec.generator == Generator::two_moons_rotations && spec.input_dim < 2) {
    v.emplace_back("stream.input_dim: two_moons_rotations requires at least 2");
  }
  return v;
}

std::vector<TaskDataset> generate(const StreamSpec& spec) {
  const auto problems = validate(spec);
  require(problems.empty(), ErrorCode::InvalidSpec, problems.empty() ? "" : problems.front());

  std::mt19937_64 rng(spec.seed);
  std::vector<ClassShape> classes;
  for (int attempt = 0;; ++attempt) {
    require(attempt < kMaxAttempts, ErrorCode::InvalidSpec,
            "could not place class prototypes at the required separation");
    switch (spec.generator) {
      case Generator::gaussian_blobs: classes = blob_classes(spec, rng); break;
      case Generator::two_moons_rotations: classes = moon_classes(spec, rng); break;
      case Generator::grid_patterns: classes = grid_classes(spec, rng); break;
    }
    std::vector<Vec> protos;
    for (const auto& c : classes) protos.push_back(c.prototype);
    if (protos.size() < 2 || min_pairwise_distance(protos) >= kMinSeparation * spec.noise_scale) break;
  }

  std::vector<TaskDataset> tasks(static_cast<std::size_t>(spec.num_tasks));
  for (int t = 0; t < spec.num_tasks; ++t) {
    TaskDataset& task = tasks[static_cast<std::size_t>(t)];
    for (int j = 0; j < spec.classes_per_task; ++j) {
      const int c = t * spec.classes_per_task + j;
      task.class_set.push_back(c);
      auto& shape = classes[static_cast<std::size_t>(c)];
      auto sample = [&] {
        return Sample{shape.draw(rng) + gaussian_vector(spec.input_dim, spec.noise_scale, rng), c};
      };
      for (int i = 0; i < spec.train_per_class; ++i) task.train.push_back(sample());
      for (int i = 0; i < spec.test_per_class; ++i) task.test.push_back(sample());
    }
    std::shuffle(task.train.begin(), task.train.end(), rng);
  }
  return tasks;
}

std::vector<TaskDataset> split_into_tasks(const std::vector<Sample>& samples, int num_classes, int classes_per_task,
                                          double train_fraction) {
  require(num_classes >= 1 && classes_per_task >= 1, ErrorCode::InvalidSpec, "class counts must be positive");
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::InvalidSpec, "train_fraction must lie in (0, 1)");
  const int num_tasks = (num_classes + classes_per_task - 1) / classes_per_task;
  std::vector<TaskDataset> tasks(static_cast<std::size_t>(num_tasks));
  std::vector<std::vector<Sample>> by_class(static_cast<std::size_t>(num_classes));
  for (const Sample& s : samples) {
    require(s.y >= 0 && s.y < num_classes, ErrorCode::InvalidSpec, "label " + std::to_string(s.y) + " out of range");
    by_class[static_cast<std::size_t>(s.y)].push_back(s);
  }
  for (int c = 0; c < num_classes; ++c) {
    TaskDataset& task = tasks[static_cast<std::size_t>(c / classes_per_task)];
    task.class_set.push_back(c);
    const auto& rows = by_class[static_cast<std::size_t>(c)];
    const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(rows.size())));
    for (std::size_t i = 0; i < rows.size(); ++i) (i < n_train ? task.train : task.test).push_back(rows[i]);
  }
  for (const TaskDataset& t : tasks) {
    require(!t.train.empty() && !t.test.empty(), ErrorCode::InvalidSpec,
            "every task needs at least one training and one test sample");
  }
  return tasks;
}

ColumnarDataset load_columnar(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path.string());
  auto tokens = [](std::string line) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    std::vector<std::string> out;
    for (std::string tok; ss >> tok;) out.push_back(tok);
    return out;
  };
  ColumnarDataset data;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = tokens(line);
    if (tok.empty() || tok.front().starts_with('#')) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      if (!header) {
        require(tok.size() == 2, ErrorCode::IoError, where + ": header must be 'd C'");
        data.dim = std::stoi(tok[0]);
        data.num_classes = std::stoi(tok[1]);
        require(data.dim >= 1 && data.num_classes >= 1, ErrorCode::IoError, where + ": header values must be positive");
        header = true;
        continue;
      }
      require(tok.size() == static_cast<std::size_t>(data.dim) + 1, ErrorCode::IoError,
              where + ": expected " + std::to_string(data.dim + 1) + " fields");
      Sample s{Eigen::VectorXd(data.dim), std::stoi(tok.back())};
      for (int i = 0; i < data.dim; ++i) s.x(i) = std::stod(tok[static_cast<std::size_t>(i)]);
      require(s.x.allFinite(), ErrorCode::IoError, where + ": non-finite feature");
      require(s.y >= 0 && s.y < data.num_classes, ErrorCode::IoError, where + ": label out of range");
      data.samples.push_back(std::move(s));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::IoError, where + ": malformed number");
    }
  }
  require(header, ErrorCode::IoError, path.string() + ": missing header");
  return data;
}

Tensor stack_inputs(const std::vector<Sample>& samples) {
  require(!samples.empty(), ErrorCode::EmptyInput, "no samples to stack");
  Tensor x(static_cast<Eigen::Index>(samples.size()), samples.front().x.size());
  for (std::size_t i = 0; i < samples.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = samples[i].x.transpose();
  return x;
}

std::vector<double> evaluate_logits(const std::vector<Tensor>& logits, const std::vector<TaskDataset>& tasks_seen,
                                    EvalMode mode) {
  require(logits.size() == tasks_seen.size(), ErrorCode::DimensionMismatch, "one logits matrix per task required");
  std::vector<int> seen;
  for (const auto& t : tasks_seen) seen.insert(seen.end(), t.class_set.begin(), t.class_set.end());
  std::sort(seen.begin(), seen.end());
  std::vector<double> acc;
  for (std::size_t t = 0; t < tasks_seen.size(); ++t) {
    const TaskDataset& task = tasks_seen[t];
    const Tensor& z = logits[t];
    require(z.rows() == static_cast<Eigen::Index>(task.test.size()), ErrorCode::DimensionMismatch,
            "logit rows do not match the test set");
    const std::vector<int>& allowed = mode == EvalMode::class_il ? seen : task.class_set;
    for (int c : allowed) {
      require(c >= 0 && c < z.cols(), ErrorCode::DimensionMismatch,
              "model output width " + std::to_string(z.cols()) + " does not cover class " + std::to_string(c));
    }
    std::size_t correct = 0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      int best = allowed.front();
      for (int c : allowed) {
        if (z(r, c) > z(r, best)) best = c;
      }
      if (best == task.test[static_cast<std::size_t>(r)].y) ++correct;
    }
    acc.push_back(task.test.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(task.test.size()));
  }
  return acc;
}

std::vector<double> evaluate(const ModelParams& model, const std::vector<TaskDataset>& tasks_seen, EvalMode mode) {
  std::vector<Tensor> out;
  for (const auto& t : tasks_seen) out.push_back(logits(model, stack_inputs(t.test)));
  return evaluate_logits(out, tasks_seen, mode);
}

}  // namespace owmmd
