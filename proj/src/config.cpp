#include "cgmmsep/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "cgmmsep/error.hpp"

namespace cgmm {

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& why) {
  throw Error(ErrorKind::kInvalidConfig, where + ": " + why);
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

// --- value codecs ------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";  // keep it a float literal
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

double parse_double(const std::string& raw, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (res.ec != std::errc() || res.ptr != raw.data() + raw.size() || !std::isfinite(v)) {
    bad(where, "expected a number, got '" + raw + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& raw, const std::string& where) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (res.ec != std::errc() || res.ptr != raw.data() + raw.size()) {
    bad(where, "expected a non-negative integer, got '" + raw + "'");
  }
  return v;
}

int parse_int(const std::string& raw, const std::string& where) {
  int v = 0;
  const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (res.ec != std::errc() || res.ptr != raw.data() + raw.size()) {
    bad(where, "expected an integer, got '" + raw + "'");
  }
  return v;
}

bool parse_bool(const std::string& raw, const std::string& where) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  bad(where, "expected true or false, got '" + raw + "'");
}

std::string parse_string(const std::string& raw, const std::string& where, bool allow_bare) {
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 2 < raw.size()) ++i;
      out += raw[i];
    }
    return out;
  }
  if (allow_bare) return raw;
  bad(where, "expected a quoted string, got '" + raw + "'");
}

using Triples = std::vector<std::array<double, 3>>;

// "[[x, y, z], ...]" with numbers only.
Triples parse_triples(const std::string& raw, const std::string& where) {
  std::string flat;
  for (char c : raw) {
    if (c != ' ' && c != '\t') flat += c;
  }
  if (flat.size() < 2 || flat.front() != '[' || flat.back() != ']') bad(where, "expected [[x, y, z], ...]");
  Triples out;
  std::size_t i = 1;
  const std::size_t end = flat.size() - 1;
  while (i < end) {
    if (flat[i] != '[') bad(where, "expected '[' at offset " + std::to_string(i));
    const auto close = flat.find(']', i);
    if (close == std::string::npos || close > end) bad(where, "unterminated triple");
    std::array<double, 3> p{};
    std::size_t n = 0;
    std::string item;
    std::istringstream parts(flat.substr(i + 1, close - i - 1));
    while (std::getline(parts, item, ',')) {
      if (n == 3) bad(where, "each position needs exactly 3 coordinates");
      p[n++] = parse_double(item, where);
    }
    if (n != 3) bad(where, "each position needs exactly 3 coordinates");
    out.push_back(p);
    i = close + 1;
    if (i < end) {
      if (flat[i] != ',') bad(where, "expected ',' between positions");
      ++i;
    }
  }
  return out;
}

std::string format_triples(const Triples& t) {
  std::string out = "[";
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) out += ", ";
    out += "[" + format_double(t[i][0]) + ", " + format_double(t[i][1]) + ", " + format_double(t[i][2]) + "]";
  }
  return out + "]";
}

// --- field registry ------------------------------------------------------------

struct Field {
  std::string section;
  std::string key;
  // Parses raw text into the config; `bare` allows unquoted strings.
  std::function<void(Config&, const std::string& raw, const std::string& where, bool bare)> set;
  // nullopt leaves the key out of the serialised form.
  std::function<std::optional<std::string>(const Config&)> get;
};

template <typename T>
Field uint_field(const char* section, const char* key, T Config::*part, std::size_t T::*member) {
  return {section, key,
          [=](Config& c, const std::string& raw, const std::string& where, bool) {
            (c.*part).*member = static_cast<std::size_t>(parse_uint(raw, where));
          },
          [=](const Config& c) { return std::optional<std::string>(std::to_string((c.*part).*member)); }};
}

template <typename T>
Field u64_field(const char* section, const char* key, T Config::*part, std::uint64_t T::*member) {
  return {section, key,
          [=](Config& c, const std::string& raw, const std::string& where, bool) {
            (c.*part).*member = parse_uint(raw, where);
          },
          [=](const Config& c) { return std::optional<std::string>(std::to_string((c.*part).*member)); }};
}

template <typename T>
Field int_field(const char* section, const char* key, T Config::*part, int T::*member) {
  return {section, key,
          [=](Config& c, const std::string& raw, const std::string& where, bool) {
            (c.*part).*member = parse_int(raw, where);
          },
          [=](const Config& c) { return std::optional<std::string>(std::to_string((c.*part).*member)); }};
}

template <typename T>
Field double_field(const char* section, const char* key, T Config::*part, double T::*member) {
  return {section, key,
          [=](Config& c, const std::string& raw, const std::string& where, bool) {
            (c.*part).*member = parse_double(raw, where);
          },
          [=](const Config& c) { return std::optional<std::string>(format_double((c.*part).*member)); }};
}

template <typename T>
Field bool_field(const char* section, const char* key, T Config::*part, bool T::*member) {
  return {section, key,
          [=](Config& c, const std::string& raw, const std::string& where, bool) {
            (c.*part).*member = parse_bool(raw, where);
          },
          [=](const Config& c) { return std::optional<std::string>((c.*part).*member ? "true" : "false"); }};
}

template <typename T>
Field string_field(const char* section, const char* key, T Config::*part, std::string T::*member) {
  return {section, key,
          [=](Config& c, const std::string& raw, const std::string& where, bool bare) {
            (c.*part).*member = parse_string(raw, where, bare);
          },
          [=](const Config& c) { return std::optional<std::string>(quote((c.*part).*member)); }};
}

const std::vector<Field>& fields() {
  using C = Config;
  static const std::vector<Field> all = {
      uint_field("geometry", "mics", &C::geometry, &C::Geometry::mics),
      double_field("geometry", "diameter_m", &C::geometry, &C::Geometry::diameter_m),
      double_field("geometry", "speed_of_sound", &C::geometry, &C::Geometry::speed_of_sound),
      {"geometry", "positions",
       [](Config& c, const std::string& raw, const std::string& where, bool) {
         c.geometry.positions = parse_triples(raw, where);
         c.geometry.mics = c.geometry.positions.size();
       },
       [](const Config& c) {
         return c.geometry.positions.empty() ? std::nullopt
                                             : std::optional<std::string>(format_triples(c.geometry.positions));
       }},

      double_field("grid", "start_deg", &C::grid, &C::Grid::start_deg),
      double_field("grid", "step_deg", &C::grid, &C::Grid::step_deg),
      uint_field("grid", "directions", &C::grid, &C::Grid::directions),

      int_field("stft", "sample_rate", &C::stft, &C::Stft::sample_rate),
      int_field("stft", "window_len", &C::stft, &C::Stft::window_len),
      int_field("stft", "hop", &C::stft, &C::Stft::hop),
      string_field("stft", "window", &C::stft, &C::Stft::window),

      uint_field("em", "sources", &C::em, &C::Em::sources),
      uint_field("em", "init_classes", &C::em, &C::Em::init_classes),
      uint_field("em", "iterations", &C::em, &C::Em::iterations),
      {"em", "nu",
       [](Config& c, const std::string& raw, const std::string& where, bool) { c.em.nu = parse_double(raw, where); },
       [](const Config& c) {
         return c.em.nu ? std::optional<std::string>(format_double(*c.em.nu)) : std::nullopt;
       }},
      double_field("em", "epsilon", &C::em, &C::Em::epsilon),
      double_field("em", "lambda_floor", &C::em, &C::Em::lambda_floor),
      double_field("em", "posterior_floor", &C::em, &C::Em::posterior_floor),
      string_field("em", "prior_scale_numerator", &C::em, &C::Em::prior_scale_numerator),
      uint_field("em", "reference_channel", &C::em, &C::Em::reference_channel),

      double_field("train", "learning_rate", &C::train, &C::Train::learning_rate),
      double_field("train", "lr_decay", &C::train, &C::Train::lr_decay),
      uint_field("train", "batch_size", &C::train, &C::Train::batch_size),
      uint_field("train", "epochs", &C::train, &C::Train::epochs),
      bool_field("train", "omega_stop_gradient", &C::train, &C::Train::omega_stop_gradient),
      u64_field("train", "seed", &C::train, &C::Train::seed),
      double_field("train", "initial_log_temperature", &C::train, &C::Train::initial_log_temperature),
      uint_field("train", "context", &C::train, &C::Train::context),
      uint_field("train", "hidden", &C::train, &C::Train::hidden),

      uint_field("simulate", "scenes", &C::simulate, &C::Simulate::scenes),
      double_field("simulate", "duration_s", &C::simulate, &C::Simulate::duration_s),
      string_field("simulate", "source_kind", &C::simulate, &C::Simulate::source_kind),
      double_field("simulate", "min_separation_deg", &C::simulate, &C::Simulate::min_separation_deg),
      double_field("simulate", "max_separation_deg", &C::simulate, &C::Simulate::max_separation_deg),
      double_field("simulate", "level_range_db", &C::simulate, &C::Simulate::level_range_db),
      {"simulate", "snr_db",
       [](Config& c, const std::string& raw, const std::string& where, bool bare) {
         if (raw == "\"none\"" || (bare && raw == "none")) {
           c.simulate.snr_db.reset();
         } else {
           c.simulate.snr_db = parse_double(raw, where);
         }
       },
       [](const Config& c) {
         return std::optional<std::string>(c.simulate.snr_db ? format_double(*c.simulate.snr_db) : "\"none\"");
       }},
      bool_field("simulate", "reverberant", &C::simulate, &C::Simulate::reverberant),
      double_field("simulate", "rt60_min", &C::simulate, &C::Simulate::rt60_min),
      double_field("simulate", "rt60_max", &C::simulate, &C::Simulate::rt60_max),
      int_field("simulate", "max_order", &C::simulate, &C::Simulate::max_order),
      u64_field("simulate", "seed", &C::simulate, &C::Simulate::seed),

      string_field("paths", "output_dir", &C::paths, &C::Paths::output_dir),
      string_field("paths", "manifest", &C::paths, &C::Paths::manifest),
      string_field("paths", "checkpoint", &C::paths, &C::Paths::checkpoint),
      string_field("paths", "train_log", &C::paths, &C::Paths::train_log),
  };
  return all;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

bool known_section(const std::string& section) {
  return std::any_of(fields().begin(), fields().end(), [&](const Field& f) { return f.section == section; });
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

}  // namespace

void Config::validate() const {
  try {
    array_geometry().validate();
    direction_grid().validate();
    stft_config().validate();
    hyperparams().validate(geometry.mics);
    em_config().validate();
    train_config().validate();
    parse_source_kind(simulate.source_kind);
  } catch (const Error& e) {
    throw Error(ErrorKind::kInvalidConfig, e.what());
  }
  if (!geometry.positions.empty() && geometry.positions.size() != geometry.mics) {
    bad("geometry.positions", "has " + std::to_string(geometry.positions.size()) + " entries but geometry.mics = " +
                                  std::to_string(geometry.mics));
  }
  if (stft.sample_rate <= 0) bad("stft.sample_rate", "must be positive");
  if (em.sources == 0) bad("em.sources", "must be positive");
  if (em.init_classes < em.sources || em.init_classes > grid.directions) {
    bad("em.init_classes", "must lie in [em.sources, grid.directions]");
  }
  if (em.reference_channel >= geometry.mics) bad("em.reference_channel", "out of range");
  if (train.context > 64 || train.hidden == 0) bad("train", "context must be <= 64 and hidden > 0");
  if (!(simulate.duration_s > 0.0)) bad("simulate.duration_s", "must be positive");
  if (simulate.min_separation_deg < 0.0 || simulate.max_separation_deg > 180.0 ||
      simulate.min_separation_deg > simulate.max_separation_deg) {
    bad("simulate", "separation range must satisfy 0 <= min <= max <= 180");
  }
  if (simulate.level_range_db < 0.0) bad("simulate.level_range_db", "must be >= 0");
  if (!(simulate.rt60_min > 0.0 && simulate.rt60_min <= simulate.rt60_max)) {
    bad("simulate", "rt60 range must satisfy 0 < min <= max");
  }
  if (simulate.max_order < 0) bad("simulate.max_order", "must be >= 0");
}

ArrayGeometry Config::array_geometry() const {
  if (!geometry.positions.empty()) {
    ArrayGeometry g;
    g.speed_of_sound = geometry.speed_of_sound;
    for (const auto& p : geometry.positions) g.mic_positions.emplace_back(p[0], p[1], p[2]);
    return g;
  }
  return ArrayGeometry::uniform_circular(geometry.mics, geometry.diameter_m, geometry.speed_of_sound);
}

DirectionGrid Config::direction_grid() const { return {grid.start_deg, grid.step_deg, grid.directions}; }

StftConfig Config::stft_config() const {
  StftConfig c;
  c.window_len = stft.window_len;
  c.hop = stft.hop;
  if (stft.window == "hann") {
    c.window = WindowType::kHann;
  } else if (stft.window == "rectangular") {
    c.window = WindowType::kRectangular;
  } else {
    bad("stft.window", "expected \"hann\" or \"rectangular\", got \"" + stft.window + "\"");
  }
  return c;
}

Hyperparams Config::hyperparams() const {
  Hyperparams h = Hyperparams::defaults(geometry.mics);
  if (em.nu) h.nu = *em.nu;
  h.epsilon = em.epsilon;
  return h;
}

EmConfig Config::em_config() const {
  EmConfig c;
  c.iterations = em.iterations;
  c.lambda_floor = em.lambda_floor;
  c.posterior_floor = em.posterior_floor;
  if (em.prior_scale_numerator == "G") {
    c.prior_scale = PriorScale::kTemplate;
  } else if (em.prior_scale_numerator == "(nu-M)G") {
    c.prior_scale = PriorScale::kScaledTemplate;
  } else {
    bad("em.prior_scale_numerator", "expected \"G\" or \"(nu-M)G\"");
  }
  return c;
}

TrainConfig Config::train_config() const {
  TrainConfig c;
  c.learning_rate = train.learning_rate;
  c.lr_decay = train.lr_decay;
  c.batch_size = train.batch_size;
  c.epochs = train.epochs;
  c.omega_stop_gradient = train.omega_stop_gradient;
  c.seed = train.seed;
  c.posterior_floor = em.posterior_floor;
  c.initial_log_temperature = train.initial_log_temperature;
  return c;
}

SceneSampler Config::scene_sampler() const {
  SceneSampler s;
  s.sample_rate = stft.sample_rate;
  s.duration_s = simulate.duration_s;
  s.num_sources = em.sources;
  s.source_kind = parse_source_kind(simulate.source_kind);
  s.min_separation_deg = simulate.min_separation_deg;
  s.max_separation_deg = simulate.max_separation_deg;
  s.level_range_db = simulate.level_range_db;
  s.snr_db = simulate.snr_db;
  s.reverberant = simulate.reverberant;
  s.rt60_min = simulate.rt60_min;
  s.rt60_max = simulate.rt60_max;
  s.max_order = simulate.max_order;
  return s;
}

Config parse_config(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  std::vector<std::string> seen;
  for (int number = 1; std::getline(in, line); ++number) {
    const std::string where = origin + ":" + std::to_string(number);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') bad(where, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section)) bad(where, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) bad(where, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    if (section.empty()) bad(where, "key '" + key + "' outside a section");
    const Field* f = find_field(section, key);
    if (!f) bad(where, "unknown key '" + key + "' in [" + section + "]");
    const std::string full = section + "." + key;
    if (std::find(seen.begin(), seen.end(), full) != seen.end()) bad(where, "duplicate key " + full);
    seen.push_back(full);
    f->set(cfg, raw, where + " (" + full + ")", false);
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string serialize_config(const Config& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto value = f.get(cfg);
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      out += "[" + f.section + "]\n";
      section = f.section;
    }
    if (value) out += f.key + " = " + *value + "\n";
  }
  return out;
}

void apply_override(Config& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    bad("--set " + assignment, "expected section.key=value");
  }
  const std::string section = trim(assignment.substr(0, dot));
  const std::string key = trim(assignment.substr(dot + 1, eq - dot - 1));
  const Field* f = find_field(section, key);
  if (!f) bad("--set " + assignment, "unknown key " + section + "." + key);
  f->set(cfg, trim(assignment.substr(eq + 1)), "--set " + section + "." + key, true);
  cfg.validate();
}

}  // namespace cgmm
