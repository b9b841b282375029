#include "cgmmsep/checkpoint.hpp"

#include <sstream>

#include "bytes.hpp"
#include "cgmmsep/error.hpp"

namespace cgmm {

namespace {

void write_string(detail::ByteWriter& w, const std::string& s) {
  w.u32(static_cast<std::uint32_t>(s.size()));
  w.bytes(s.data(), s.size());
}

void write_vector(detail::ByteWriter& w, const Eigen::VectorXd& v) {
  w.u64(static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v(i));
}

std::string read_string(detail::ByteReader& r) {
  const std::uint32_t n = r.u32();
  if (n > r.remaining()) r.fail("string length exceeds file size");
  return r.tag(n);
}

Eigen::VectorXd read_vector(detail::ByteReader& r) {
  const std::uint64_t n = r.uint(8);
  if (n > r.remaining() / 8) r.fail("vector length exceeds file size");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.f64();
  return v;
}

void write_adam(detail::ByteWriter& w, const AdamState& s) {
  w.u64(s.step);
  write_vector(w, s.m);
  write_vector(w, s.v);
}

AdamState read_adam(detail::ByteReader& r) {
  AdamState s;
  s.step = r.uint(8);
  s.m = read_vector(r);
  s.v = read_vector(r);
  return s;
}

std::string window_name(WindowType w) { return w == WindowType::kHann ? "hann" : "rectangular"; }

void parse_stft(const std::string& text, Checkpoint& ck) {
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::kCheckpoint, "malformed STFT descriptor '" + text + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "window_len") {
        ck.stft.window_len = std::stoi(value);
      } else if (key == "hop") {
        ck.stft.hop = std::stoi(value);
      } else if (key == "sample_rate") {
        ck.sample_rate = std::stoi(value);
      } else if (key == "window") {
        if (value != "hann" && value != "rectangular") throw std::invalid_argument(value);
        ck.stft.window = value == "hann" ? WindowType::kHann : WindowType::kRectangular;
      } else {
        throw std::invalid_argument(key);
      }
    } catch (const std::exception&) {
      throw Error(ErrorKind::kCheckpoint, "bad STFT descriptor entry '" + item + "'");
    }
  }
}

}  // namespace

std::string Checkpoint::topology() const {
  return mask_topology + "|" + loc_topology + "|window_len=" + std::to_string(stft.window_len) +
         ",hop=" + std::to_string(stft.hop) + ",window=" + window_name(stft.window) +
         ",sample_rate=" + std::to_string(sample_rate);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes("CGCK", 4);
  w.u32(kCheckpointVersion);
  write_string(w, ck.topology());
  write_vector(w, ck.mask_params);
  write_vector(w, ck.loc_params);
  write_adam(w, ck.mask_adam);
  write_adam(w, ck.loc_adam);
  w.f64(ck.learning_rate);
  w.u64(ck.epoch);
  w.f64(ck.last_epoch_loss);
  detail::dump(path, w.data());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader r(detail::slurp(path), path.string(), ErrorKind::kCheckpoint);
  if (r.remaining() < 4 || r.tag(4) != "CGCK") r.fail("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const std::string topology = read_string(r);
  const auto a = topology.find('|');
  const auto b = a == std::string::npos ? a : topology.find('|', a + 1);
  if (b == std::string::npos) r.fail("malformed topology descriptor");
  ck.mask_topology = topology.substr(0, a);
  ck.loc_topology = topology.substr(a + 1, b - a - 1);
  parse_stft(topology.substr(b + 1), ck);
  ck.mask_params = read_vector(r);
  ck.loc_params = read_vector(r);
  ck.mask_adam = read_adam(r);
  ck.loc_adam = read_adam(r);
  ck.learning_rate = r.f64();
  ck.epoch = r.uint(8);
  ck.last_epoch_loss = r.f64();
  if (r.remaining() != 0) r.fail("trailing bytes after checkpoint");
  return ck;
}

Model instantiate(const Checkpoint& ck) {
  Model m;
  m.mask = make_mask_network(ck.mask_topology);
  m.loc = make_localization_map(ck.loc_topology);
  if (m.mask->parameters().size() != ck.mask_params.size()) {
    throw Error(ErrorKind::kCheckpoint, "mask parameter count " + std::to_string(ck.mask_params.size()) +
                                            " does not match topology " + ck.mask_topology);
  }
  if (m.loc->parameters().size() != ck.loc_params.size()) {
    throw Error(ErrorKind::kCheckpoint, "localization parameter count does not match topology " + ck.loc_topology);
  }
  m.mask->parameters() = ck.mask_params;
  m.loc->parameters() = ck.loc_params;
  return m;
}

Checkpoint make_checkpoint(const MaskNetwork& g, const LocalizationMap& h, const StftConfig& stft,
                           int sample_rate) {
  Checkpoint ck;
  ck.mask_topology = g.topology();
  ck.loc_topology = h.topology();
  ck.stft = stft;
  ck.sample_rate = sample_rate;
  ck.mask_params = g.parameters();
  ck.loc_params = h.parameters();
  return ck;
}

}  // namespace cgmm
