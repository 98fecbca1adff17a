#include "learnpath/toygauss.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "learnpath/csv.hpp"
#include "learnpath/rng.hpp"

namespace learnpath {

void GaussianSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("GaussianSpec: num_classes must be >= 2");
  if (input_dim < 1) throw std::invalid_argument("GaussianSpec: input_dim must be >= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::invalid_argument("GaussianSpec: sigma must be positive");
  if (!(delta_mu >= 0.0) || !std::isfinite(delta_mu))
    throw std::invalid_argument("GaussianSpec: delta_mu must be non-negative");
}

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split tag '" + s + "'");
}

ToyDataset::ToyDataset(GaussianSpec spec, DenseMatrix means, std::vector<ToySample> samples)
    : spec_(spec), means_(std::move(means)), samples_(std::move(samples)) {}

std::vector<std::size_t> ToyDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i)
    if (samples_[i].split == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> ToyDataset::flipped_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i)
    if (samples_[i].split == Split::kTrain && samples_[i].flipped()) out.push_back(i);
  return out;
}

DenseMatrix gen_class_means(const GaussianSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, Stream::kMeans);
  std::uniform_int_distribution<int> pick(-1, 1);
  DenseMatrix means(spec.num_classes, spec.input_dim);
  for (double& m : means.data()) m = spec.delta_mu * pick(rng);
  return means;
}

Vector compute_p_star(std::span<const double> x, const DenseMatrix& means, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("compute_p_star: sigma must be positive");
  if (x.size() != means.cols()) throw std::invalid_argument("compute_p_star: dimension mismatch");
  Vector score(means.rows());
  for (std::size_t k = 0; k < means.rows(); ++k) {
    const double d = distance_l2(x, means.row(k));
    score[k] = -(d * d) / (2.0 * sigma * sigma);
  }
  return softmax(score);
}

ToyDataset sample_dataset(const GaussianSpec& spec, std::size_t n) {
  spec.validate();
  if (n < spec.num_classes)
    throw std::invalid_argument("sample_dataset: need at least one sample per class (N >= K)");
  DenseMatrix means = gen_class_means(spec);
  Rng rng = make_rng(spec.seed, Stream::kSampling);
  std::uniform_int_distribution<std::size_t> label(0, spec.num_classes - 1);
  std::normal_distribution<double> noise(0.0, spec.sigma);

  std::vector<ToySample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    ToySample& s = samples[i];
    s.index = i;
    s.y = s.original_y = label(rng);
    s.x.resize(spec.input_dim);
    for (std::size_t d = 0; d < spec.input_dim; ++d) s.x[d] = means(s.y, d) + noise(rng);
    s.p_star = compute_p_star(s.x, means, spec.sigma);
  }
  return ToyDataset(spec, std::move(means), std::move(samples));
}

ToyDataset split_dataset(ToyDataset ds, const SplitRatios& ratios, std::uint64_t seed) {
  const double r[3] = {ratios.train, ratios.valid, ratios.test};
  for (double v : r)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("split_dataset: ratios must be non-negative");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-6)
    throw std::invalid_argument("split_dataset: ratios must sum to 1");

  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, Stream::kSplit);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(n * r[0])));
  const auto n_valid =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(n * r[1])));
  for (std::size_t pos = 0; pos < n; ++pos) {
    const Split tag = pos < n_train             ? Split::kTrain
                      : pos < n_train + n_valid ? Split::kValid
                                                : Split::kTest;
    ds.samples()[order[pos]].split = tag;
  }
  return ds;
}

ToyDataset flip_labels(ToyDataset ds, double flip_ratio, std::uint64_t seed) {
  if (!(flip_ratio >= 0.0 && flip_ratio <= 1.0))
    throw std::invalid_argument("flip_labels: flip_ratio must lie in [0, 1]");
  std::vector<std::size_t> train = ds.indices(Split::kTrain);
  const auto n_flip = static_cast<std::size_t>(std::llround(flip_ratio * train.size()));
  if (n_flip == 0) return ds;

  Rng rng = make_rng(seed, Stream::kFlips);
  std::shuffle(train.begin(), train.end(), rng);
  const std::size_t k = ds.num_classes();
  std::uniform_int_distribution<std::size_t> other(0, k - 2);
  for (std::size_t i = 0; i < n_flip; ++i) {
    ToySample& s = ds.samples()[train[i]];
    std::size_t c = other(rng);
    if (c >= s.original_y) ++c;
    s.y = c;
  }
  return ds;
}

Vector perturb_target(std::span<const double> p_star, double noise_scale, std::uint64_t seed) {
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("perturb_target: noise_scale must be >= 0");
  Vector out(p_star.begin(), p_star.end());
  if (noise_scale == 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, noise_scale);
  double total = 0.0;
  for (double& v : out) {
    v = std::max(0.0, v + noise(rng));
    total += v;
  }
  if (total <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return out;
  }
  for (double& v : out) v /= total;
  return out;
}

// ---------------------------------------------------------------------------

void write_dataset(const ToyDataset& ds, const std::filesystem::path& csv_path,
                   const std::filesystem::path& header_path) {
  const auto& spec = ds.spec();
  std::ostringstream os;
  os << "index,split,y,original_y";
  for (std::size_t d = 0; d < spec.input_dim; ++d) os << ",x_" << d;
  for (std::size_t k = 0; k < spec.num_classes; ++k) os << ",pstar_" << k;
  os << '\n';
  for (const auto& s : ds.samples()) {
    os << s.index << ',' << to_string(s.split) << ',' << s.y << ',' << s.original_y;
    for (double v : s.x) os << ',' << format_double(v);
    for (double v : s.p_star) os << ',' << format_double(v);
    os << '\n';
  }

  nlohmann::ordered_json header;
  header["num_classes"] = spec.num_classes;
  header["input_dim"] = spec.input_dim;
  header["sigma"] = spec.sigma;
  header["delta_mu"] = spec.delta_mu;
  header["seed"] = spec.seed;
  header["num_samples"] = ds.size();
  auto& means = header["means"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < ds.means().rows(); ++k) {
    const auto row = ds.means().row(k);
    means.push_back(std::vector<double>(row.begin(), row.end()));
  }
  write_file_atomic(header_path, header.dump(2) + "\n");
  write_file_atomic(csv_path, os.str());
}

ToyDataset read_dataset(const std::filesystem::path& csv_path,
                        const std::filesystem::path& header_path) {
  const auto header = nlohmann::json::parse(read_file(header_path));
  GaussianSpec spec;
  spec.num_classes = header.at("num_classes").get<std::size_t>();
  spec.input_dim = header.at("input_dim").get<std::size_t>();
  spec.sigma = header.at("sigma").get<double>();
  spec.delta_mu = header.at("delta_mu").get<double>();
  spec.seed = header.at("seed").get<std::uint64_t>();
  spec.validate();
  DenseMatrix means(spec.num_classes, spec.input_dim);
  const auto& m = header.at("means");
  for (std::size_t k = 0; k < spec.num_classes; ++k)
    for (std::size_t d = 0; d < spec.input_dim; ++d) means(k, d) = m.at(k).at(d).get<double>();

  std::istringstream is(read_file(csv_path));
  std::string line;
  std::getline(is, line);
  const std::size_t expected = 4 + spec.input_dim + spec.num_classes;
  if (split_csv_line(line).size() != expected)
    throw std::runtime_error("read_dataset: column count does not match header");
  std::vector<ToySample> samples;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != expected) throw std::runtime_error("read_dataset: malformed row");
    ToySample s;
    s.index = parse_size(f[0]);
    s.split = split_from_string(f[1]);
    s.y = parse_size(f[2]);
    s.original_y = parse_size(f[3]);
    for (std::size_t d = 0; d < spec.input_dim; ++d) s.x.push_back(parse_double(f[4 + d]));
    for (std::size_t k = 0; k < spec.num_classes; ++k)
      s.p_star.push_back(parse_double(f[4 + spec.input_dim + k]));
    samples.push_back(std::move(s));
  }
  return ToyDataset(spec, std::move(means), std::move(samples));
}

}  // namespace learnpath
