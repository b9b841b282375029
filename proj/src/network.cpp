#include "cgmmsep/network.hpp"

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "cgmmsep/error.hpp"

namespace cgmm {

namespace {

using Index = Eigen::Index;

// Softmax over groups of `group` consecutive columns of each row.
Eigen::MatrixXd grouped_softmax(const Eigen::MatrixXd& logits, std::size_t group) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  const auto g = static_cast<Index>(group);
  for (Index r = 0; r < logits.rows(); ++r) {
    for (Index c0 = 0; c0 < logits.cols(); c0 += g) {
      const auto seg = logits.row(r).segment(c0, g);
      const double peak = seg.maxCoeff();
      auto dst = out.row(r).segment(c0, g);
      dst = (seg.array() - peak).exp().matrix();
      dst /= dst.sum();
    }
  }
  return out;
}

// dLoss/dlogits from dLoss/dprobs for a grouped softmax.
Eigen::MatrixXd grouped_softmax_backward(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& grad,
                                         std::size_t group) {
  Eigen::MatrixXd out(probs.rows(), probs.cols());
  const auto g = static_cast<Index>(group);
  for (Index r = 0; r < probs.rows(); ++r) {
    for (Index c0 = 0; c0 < probs.cols(); c0 += g) {
      const auto p = probs.row(r).segment(c0, g).array();
      const auto dp = grad.row(r).segment(c0, g).array();
      const double inner = (p * dp).sum();
      out.row(r).segment(c0, g) = (p * (dp - inner)).matrix();
    }
  }
  return out;
}

MaskPosterior to_mask(const Eigen::MatrixXd& probs, std::size_t bins, std::size_t sources) {
  MaskPosterior z(static_cast<std::size_t>(probs.rows()), bins, sources);
  for (Index t = 0; t < probs.rows(); ++t) {
    for (Index c = 0; c < probs.cols(); ++c) z.values[static_cast<std::size_t>(t * probs.cols() + c)] = probs(t, c);
  }
  return z;
}

Eigen::MatrixXd grad_matrix(const std::vector<double>& grad_ez, Index frames, Index cols) {
  if (static_cast<Index>(grad_ez.size()) != frames * cols) {
    throw Error(ErrorKind::kDimension, "mask gradient does not match the cached forward pass");
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      grad_ez.data(), frames, cols);
}

void check_features(const Eigen::MatrixXd& features, std::size_t bins) {
  if (static_cast<std::size_t>(features.cols()) != bins || features.rows() == 0) {
    throw Error(ErrorKind::kDimension, "features have " + std::to_string(features.cols()) +
                                           " bins, network expects " + std::to_string(bins));
  }
  if (!features.allFinite()) throw Error(ErrorKind::kNumeric, "non-finite network input");
}

// "Name(key=value,...)" -> name and key/value map.
std::pair<std::string, std::map<std::string, std::string>> parse_topology(const std::string& text) {
  const auto open = text.find('(');
  if (open == std::string::npos || text.back() != ')') {
    throw Error(ErrorKind::kCheckpoint, "malformed topology '" + text + "'");
  }
  std::map<std::string, std::string> fields;
  std::stringstream body(text.substr(open + 1, text.size() - open - 2));
  std::string item;
  while (std::getline(body, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::kCheckpoint, "malformed topology '" + text + "'");
    fields[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return {text.substr(0, open), fields};
}

std::size_t field(const std::map<std::string, std::string>& fields, const std::string& key,
                  const std::string& text) {
  const auto it = fields.find(key);
  if (it == fields.end()) throw Error(ErrorKind::kCheckpoint, "topology '" + text + "' lacks " + key);
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw Error(ErrorKind::kCheckpoint, "topology '" + text + "' has a bad " + key);
  }
}

}  // namespace

Eigen::MatrixXd log_magnitude_features(const Spectrogram& x, std::size_t channel) {
  if (channel >= x.channels) throw Error(ErrorKind::kDimension, "feature channel out of range");
  Eigen::MatrixXd feat(static_cast<Index>(x.frames), static_cast<Index>(x.bins));
  for (std::size_t t = 0; t < x.frames; ++t) {
    for (std::size_t f = 0; f < x.bins; ++f) {
      feat(static_cast<Index>(t), static_cast<Index>(f)) = std::log(std::abs(x(t, f, channel)) + 1e-8);
    }
  }
  if (feat.size() > 0) feat.array() -= feat.mean();
  return feat;
}

// --- ReferenceMaskNet --------------------------------------------------------

ReferenceMaskNet::ReferenceMaskNet(std::size_t bins, std::size_t sources, std::size_t context,
                                   std::size_t hidden, std::uint64_t seed)
    : bins_(bins), sources_(sources), context_(context), hidden_(hidden) {
  if (bins == 0 || sources == 0 || hidden == 0) {
    throw Error(ErrorKind::kInvalidConfig, "ReferenceMaskNet needs positive bins, sources and width");
  }
  const std::size_t in = (2 * context + 1) * bins;
  const std::size_t out = bins * sources;
  params_.resize(static_cast<Index>(hidden * in + hidden + out * hidden + out));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> w1(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  std::normal_distribution<double> w2(0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
  Index i = 0;
  for (std::size_t j = 0; j < hidden * in; ++j) params_(i++) = w1(rng);
  for (std::size_t j = 0; j < hidden; ++j) params_(i++) = 0.0;
  for (std::size_t j = 0; j < out * hidden; ++j) params_(i++) = w2(rng);
  for (std::size_t j = 0; j < out; ++j) params_(i++) = 0.0;
}

std::string ReferenceMaskNet::topology() const {
  return "ReferenceMaskNet(bins=" + std::to_string(bins_) + ",sources=" + std::to_string(sources_) +
         ",context=" + std::to_string(context_) + ",hidden=" + std::to_string(hidden_) + ")";
}

MaskPosterior ReferenceMaskNet::forward(const Eigen::MatrixXd& features, ForwardCache* cache) const {
  check_features(features, bins_);
  const Index T = features.rows();
  const auto F = static_cast<Index>(bins_);
  const auto C = static_cast<Index>(context_);
  const auto H = static_cast<Index>(hidden_);
  const Index in = (2 * C + 1) * F;
  const auto out = static_cast<Index>(bins_ * sources_);

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(T, in);
  for (Index t = 0; t < T; ++t) {
    for (Index c = -C; c <= C; ++c) {
      const Index s = t + c;
      if (s >= 0 && s < T) x.row(t).segment((c + C) * F, F) = features.row(s);
    }
  }
  Index off = 0;
  const Eigen::Map<const Eigen::MatrixXd> w1(params_.data() + off, H, in);
  off += H * in;
  const Eigen::Map<const Eigen::VectorXd> b1(params_.data() + off, H);
  off += H;
  const Eigen::Map<const Eigen::MatrixXd> w2(params_.data() + off, out, H);
  off += out * H;
  const Eigen::Map<const Eigen::VectorXd> b2(params_.data() + off, out);

  Eigen::MatrixXd hid = x * w1.transpose();
  hid.rowwise() += b1.transpose();
  hid = hid.array().tanh().matrix();
  Eigen::MatrixXd logits = hid * w2.transpose();
  logits.rowwise() += b2.transpose();
  Eigen::MatrixXd probs = grouped_softmax(logits, sources_);
  MaskPosterior z = to_mask(probs, bins_, sources_);
  if (cache) cache->tensors = {std::move(x), std::move(hid), std::move(probs)};
  return z;
}

Eigen::VectorXd ReferenceMaskNet::backward(const ForwardCache& cache, const std::vector<double>& grad_ez) const {
  if (cache.tensors.size() != 3) throw Error(ErrorKind::kDimension, "ReferenceMaskNet cache is incomplete");
  const auto& x = cache.tensors[0];
  const auto& hid = cache.tensors[1];
  const auto& probs = cache.tensors[2];
  const auto H = static_cast<Index>(hidden_);
  const Index in = x.cols();
  const Index out = probs.cols();

  const Eigen::MatrixXd d_logits =
      grouped_softmax_backward(probs, grad_matrix(grad_ez, probs.rows(), out), sources_);
  const Eigen::Map<const Eigen::MatrixXd> w2(params_.data() + H * in + H, out, H);
  const Eigen::MatrixXd d_hid = (d_logits * w2).array() * (1.0 - hid.array().square());

  Eigen::VectorXd grad(params_.size());
  Index off = 0;
  Eigen::Map<Eigen::MatrixXd>(grad.data() + off, H, in) = d_hid.transpose() * x;
  off += H * in;
  grad.segment(off, H) = d_hid.colwise().sum().transpose();
  off += H;
  Eigen::Map<Eigen::MatrixXd>(grad.data() + off, out, H) = d_logits.transpose() * hid;
  off += out * H;
  grad.segment(off, out) = d_logits.colwise().sum().transpose();
  return grad;
}

// --- LinearMaskNet -----------------------------------------------------------

LinearMaskNet::LinearMaskNet(std::size_t bins, std::size_t sources, std::uint64_t seed)
    : bins_(bins), sources_(sources) {
  if (bins == 0 || sources == 0) throw Error(ErrorKind::kInvalidConfig, "LinearMaskNet needs positive sizes");
  params_.resize(static_cast<Index>(2 * bins * sources));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> init(0.0, 0.5);
  for (Index i = 0; i < params_.size(); ++i) params_(i) = init(rng);
}

std::string LinearMaskNet::topology() const {
  return "LinearMaskNet(bins=" + std::to_string(bins_) + ",sources=" + std::to_string(sources_) + ")";
}

MaskPosterior LinearMaskNet::forward(const Eigen::MatrixXd& features, ForwardCache* cache) const {
  check_features(features, bins_);
  const Index T = features.rows();
  const auto K = static_cast<Index>(sources_);
  const auto FK = static_cast<Index>(bins_ * sources_);
  Eigen::MatrixXd logits(T, FK);
  for (Index t = 0; t < T; ++t) {
    for (Index c = 0; c < FK; ++c) logits(t, c) = params_(c) * features(t, c / K) + params_(FK + c);
  }
  Eigen::MatrixXd probs = grouped_softmax(logits, sources_);
  MaskPosterior z = to_mask(probs, bins_, sources_);
  if (cache) cache->tensors = {features, std::move(probs)};
  return z;
}

Eigen::VectorXd LinearMaskNet::backward(const ForwardCache& cache, const std::vector<double>& grad_ez) const {
  if (cache.tensors.size() != 2) throw Error(ErrorKind::kDimension, "LinearMaskNet cache is incomplete");
  const auto& features = cache.tensors[0];
  const auto& probs = cache.tensors[1];
  const auto K = static_cast<Index>(sources_);
  const Index FK = probs.cols();
  const Eigen::MatrixXd d_logits =
      grouped_softmax_backward(probs, grad_matrix(grad_ez, probs.rows(), FK), sources_);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  for (Index t = 0; t < probs.rows(); ++t) {
    for (Index c = 0; c < FK; ++c) {
      grad(c) += d_logits(t, c) * features(t, c / K);
      grad(FK + c) += d_logits(t, c);
    }
  }
  return grad;
}

// --- AffineLocalizationMap ---------------------------------------------------

AffineLocalizationMap::AffineLocalizationMap(std::size_t directions, double initial_log_temperature)
    : directions_(directions) {
  if (directions == 0) throw Error(ErrorKind::kInvalidConfig, "localization map needs directions");
  const auto D = static_cast<Index>(directions);
  params_ = Eigen::VectorXd::Zero(2 * D + 1);
  params_.head(D).setOnes();
  params_(2 * D) = initial_log_temperature;
}

std::string AffineLocalizationMap::topology() const {
  return "AffineLocalizationMap(directions=" + std::to_string(directions_) + ")";
}

DoaPosterior AffineLocalizationMap::forward(const Eigen::MatrixXd& omega, double observations,
                                            ForwardCache* cache) const {
  const auto D = static_cast<Index>(directions_);
  if (omega.cols() != D) throw Error(ErrorKind::kDimension, "omega does not match the direction count");
  if (!(observations > 0.0)) throw Error(ErrorKind::kDimension, "omega needs a positive observation count");
  if (!omega.allFinite()) throw Error(ErrorKind::kNumeric, "non-finite omega");
  const double scale = std::exp(params_(2 * D));
  Eigen::MatrixXd u = (omega / observations).array().rowwise() * params_.head(D).transpose().array();
  u.rowwise() += params_.segment(D, D).transpose();
  const Eigen::MatrixXd probs = grouped_softmax(scale * u, directions_);
  DoaPosterior ew(static_cast<std::size_t>(omega.rows()), directions_);
  for (Index k = 0; k < omega.rows(); ++k) {
    for (Index d = 0; d < D; ++d) ew.values[static_cast<std::size_t>(k * D + d)] = probs(k, d);
  }
  if (cache) {
    Eigen::MatrixXd n(1, 1);
    n(0, 0) = observations;
    cache->tensors = {omega, u, probs, n};
  }
  return ew;
}

LocalizationMap::Gradients AffineLocalizationMap::backward(const ForwardCache& cache,
                                                           const Eigen::MatrixXd& grad_ew) const {
  if (cache.tensors.size() != 4) throw Error(ErrorKind::kDimension, "localization cache is incomplete");
  const auto& omega = cache.tensors[0];
  const auto& u = cache.tensors[1];
  const auto& probs = cache.tensors[2];
  const double n = cache.tensors[3](0, 0);
  const auto D = static_cast<Index>(directions_);
  if (grad_ew.rows() != probs.rows() || grad_ew.cols() != D) {
    throw Error(ErrorKind::kDimension, "DoA gradient does not match the cached forward pass");
  }
  const double scale = std::exp(params_(2 * D));
  const Eigen::MatrixXd d_logits = grouped_softmax_backward(probs, grad_ew, directions_);
  Gradients g;
  g.parameters = Eigen::VectorXd::Zero(params_.size());
  g.parameters.head(D) = scale * (d_logits.array() * omega.array() / n).colwise().sum().transpose();
  g.parameters.segment(D, D) = scale * d_logits.colwise().sum().transpose();
  g.parameters(2 * D) = scale * (d_logits.array() * u.array()).sum();
  g.omega = (scale / n) * (d_logits.array().rowwise() * params_.head(D).transpose().array()).matrix();
  return g;
}

std::unique_ptr<MaskNetwork> make_mask_network(const std::string& topology, std::uint64_t seed) {
  const auto [name, fields] = parse_topology(topology);
  if (name == "ReferenceMaskNet") {
    return std::make_unique<ReferenceMaskNet>(field(fields, "bins", topology), field(fields, "sources", topology),
                                              field(fields, "context", topology),
                                              field(fields, "hidden", topology), seed);
  }
  if (name == "LinearMaskNet") {
    return std::make_unique<LinearMaskNet>(field(fields, "bins", topology), field(fields, "sources", topology),
                                           seed);
  }
  throw Error(ErrorKind::kCheckpoint, "unknown mask network '" + name + "'");
}

std::unique_ptr<LocalizationMap> make_localization_map(const std::string& topology) {
  const auto [name, fields] = parse_topology(topology);
  if (name == "AffineLocalizationMap") {
    return std::make_unique<AffineLocalizationMap>(field(fields, "directions", topology));
  }
  throw Error(ErrorKind::kCheckpoint, "unknown localization map '" + name + "'");
}

}  // namespace cgmm
