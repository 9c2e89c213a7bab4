#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "nrlg/errors.hpp"
#include "nrlg/forward.hpp"
#include "nrlg/operators.hpp"
#include "nrlg/samplers.hpp"
#include "nrlg/tensor.hpp"

namespace nrlg {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// tensor file: "NRTF" | u16 version=1 | u8 ndim | u32 dims[] | f64 payload
// little-endian, row-major
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline bool get_bytes(std::istream& in, unsigned char* b, std::size_t n) {
  in.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

inline std::uint16_t u16_from(const unsigned char* b) {
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
inline std::uint32_t u32_from(const unsigned char* b) {
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline double f64_from(const unsigned char* b) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline void write_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write tensor file: " + path);
  out.write("NRTF", 4);
  detail::put_u16(out, 1);
  out.put(static_cast<char>(t.ndim()));
  for (std::size_t d : t.dims())
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64(out, t[i]);
  if (!out) throw io_error("short write on tensor file: " + path);
}

inline Tensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open tensor file: " + path);
  unsigned char hdr[7];
  if (!detail::get_bytes(in, hdr, 7) || std::memcmp(hdr, "NRTF", 4) != 0)
    throw io_error("not a tensor file: " + path);
  if (detail::u16_from(hdr + 4) != 1)
    throw io_error("unsupported tensor file version in " + path);
  std::size_t ndim = hdr[6];
  std::vector<std::size_t> dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    unsigned char b[4];
    if (!detail::get_bytes(in, b, 4)) throw io_error("truncated tensor file: " + path);
    dims[i] = detail::u32_from(b);
  }
  Tensor t(dims);
  for (std::size_t i = 0; i < t.size(); ++i) {
    unsigned char b[8];
    if (!detail::get_bytes(in, b, 8)) throw io_error("truncated tensor file: " + path);
    t[i] = detail::f64_from(b);
  }
  return t;
}

// ---------------------------------------------------------------------------
// PGM (P5) / PPM (P6), 8-bit, maxval 255
// ---------------------------------------------------------------------------

namespace detail {

inline int next_header_token(std::istream& in) {
  // skips whitespace and '#' comments
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      return c;
    }
  }
  return EOF;
}

inline std::size_t read_header_number(std::istream& in) {
  int c = next_header_token(in);
  if (c == EOF || !std::isdigit(c)) throw io_error("malformed image header");
  std::size_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + static_cast<std::size_t>(c - '0');
    c = in.get();
  }
  return v;
}

}  // namespace detail

// Reads a binary PGM/PPM into [0,1] (v / 255). Gray images come back as
// (H, W), color as (H, W, 3).
inline Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open image: " + path);
  char magic[2];
  if (!in.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw io_error("unsupported image format (need binary PGM/PPM): " + path);
  const std::size_t channels = magic[1] == '5' ? 1 : 3;
  std::size_t w = detail::read_header_number(in);
  std::size_t h = detail::read_header_number(in);
  std::size_t maxval = detail::read_header_number(in);
  if (maxval != 255) throw io_error("unsupported maxval (need 255): " + path);
  // header number parsing consumed the single whitespace after maxval
  std::vector<unsigned char> raw(w * h * channels);
  if (!detail::get_bytes(in, raw.data(), raw.size()))
    throw io_error("truncated image data: " + path);
  Tensor t(channels == 1 ? std::vector<std::size_t>{h, w}
                         : std::vector<std::size_t>{h, w, channels});
  for (std::size_t i = 0; i < raw.size(); ++i) t[i] = raw[i] / 255.0;
  return t;
}

// Writes [0,1] data as 8-bit PGM/PPM; values are clamped and rounded half
// away from zero.
inline void write_image(const std::string& path, const Tensor& t) {
  std::size_t channels = 1;
  if (t.ndim() == 3 && t.dims()[2] == 3)
    channels = 3;
  else if (t.ndim() != 2)
    throw shape_error("write_image: expected (H,W) or (H,W,3) tensor");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write image: " + path);
  out << (channels == 1 ? "P5" : "P6") << "\n"
      << t.dims()[1] << " " << t.dims()[0] << "\n255\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = std::min(1.0, std::max(0.0, t[i]));
    out.put(static_cast<char>(static_cast<unsigned char>(std::floor(v * 255.0 + 0.5))));
  }
  if (!out) throw io_error("short write on image: " + path);
}

inline ImageGeometry image_geometry(const Tensor& t) {
  if (t.ndim() == 2) return {t.dims()[0], t.dims()[1], 1};
  if (t.ndim() == 3) return {t.dims()[0], t.dims()[1], t.dims()[2]};
  throw shape_error("expected an image-shaped tensor");
}

// ---------------------------------------------------------------------------
// measurement sidecar
// ---------------------------------------------------------------------------

inline json descriptor_to_json(const OperatorDescriptor& d) {
  json j;
  j["kind"] = d.kind;
  j["params"] = d.params;
  j["text_params"] = d.text_params;
  return j;
}

inline OperatorDescriptor descriptor_from_json(const json& j) {
  OperatorDescriptor d;
  d.kind = j.at("kind").get<std::string>();
  if (j.contains("params"))
    d.params = j.at("params").get<std::map<std::string, double>>();
  if (j.contains("text_params"))
    d.text_params = j.at("text_params").get<std::map<std::string, std::string>>();
  return d;
}

// Writes <base>.nrtf (the y tensor) and <base>.json (replay metadata).
inline void write_measurement(const std::string& base, const Measurement& m) {
  write_tensor(base + ".nrtf", m.y);
  json j;
  j["format"] = "nrlg-measurement";
  j["version"] = 1;
  j["tensor_file"] = std::filesystem::path(base + ".nrtf").filename().string();
  j["sigma_y"] = m.sigma_y;
  j["noise_seed"] = m.noise_seed;
  j["value_range"] = {0.0, 1.0};
  j["geometry"] = {{"height", m.geometry.height},
                   {"width", m.geometry.width},
                   {"channels", m.geometry.channels}};
  j["operator"] = descriptor_to_json(m.operator_descriptor);
  if (!m.source_image.empty()) j["source_image"] = m.source_image;
  std::ofstream out(base + ".json");
  if (!out) throw io_error("cannot write sidecar: " + base + ".json");
  out << j.dump(2) << "\n";
}

// Accepts either the sidecar path or the base path.
inline Measurement read_measurement(const std::string& path) {
  std::string sidecar = path;
  if (sidecar.size() < 5 || sidecar.substr(sidecar.size() - 5) != ".json")
    sidecar += ".json";
  std::ifstream in(sidecar);
  if (!in) throw io_error("cannot open measurement sidecar: " + sidecar);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw io_error("bad sidecar JSON in " + sidecar + ": " + e.what());
  }
  Measurement m;
  m.sigma_y = j.at("sigma_y").get<double>();
  m.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  m.geometry = ImageGeometry{j.at("geometry").at("height").get<std::size_t>(),
                             j.at("geometry").at("width").get<std::size_t>(),
                             j.at("geometry").at("channels").get<std::size_t>()};
  m.operator_descriptor = descriptor_from_json(j.at("operator"));
  if (j.contains("source_image")) m.source_image = j.at("source_image");
  auto dir = std::filesystem::path(sidecar).parent_path();
  std::string tensor_file = j.at("tensor_file").get<std::string>();
  m.y = read_tensor((dir / tensor_file).string());
  return m;
}

// ---------------------------------------------------------------------------
// run configuration: flat key=value text, '#' comments
// ---------------------------------------------------------------------------

struct RunConfig {
  int T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  SamplerKind sampler = SamplerKind::dd_nrlg;
  std::optional<std::string> op;  // descriptor text; measurement's by default
  std::optional<double> mu;       // preset-resolved when omitted
  std::optional<double> zeta;
  std::optional<double> sigma_y;  // measurement's by default
  std::uint64_t seed = 0;
  std::optional<int> steps;  // default: T
  std::size_t snapshot_stride = 0;
  bool mean_correction = true;
  bool jacobian_term = false;
  std::string denoiser = "analytic";  // "analytic" | "external"
  double prior_mean = 0.5;
  double prior_var = 1.0;
  std::optional<std::string> prior_mean_file;
  std::optional<std::string> prior_var_file;
  std::string external_cmd;
  double rho = 1.0;  // dps guidance strength
  double clamp_min = 0.0;
  double clamp_max = 1.0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& v, int line) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw parse_error("expected a number, got '" + v + "'", line);
  }
}

inline bool parse_bool(const std::string& v, int line) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw parse_error("expected a boolean, got '" + v + "'", line);
}

inline void require_file(const std::string& path, int line) {
  if (!std::filesystem::exists(path))
    throw parse_error("referenced file does not exist: " + path, line);
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream ss(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    std::string line = raw;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw parse_error("expected key=value", line_no);
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (value.empty()) throw parse_error("empty value for key '" + key + "'", line_no);

    if (key == "T") {
      cfg.T = static_cast<int>(detail::parse_number(value, line_no));
      if (cfg.T < 1) throw parse_error("T must be >= 1", line_no);
    } else if (key == "beta_start") {
      cfg.beta_start = detail::parse_number(value, line_no);
    } else if (key == "beta_end") {
      cfg.beta_end = detail::parse_number(value, line_no);
    } else if (key == "sampler") {
      try {
        cfg.sampler = sampler_kind_from_string(value);
      } catch (const domain_error& e) {
        throw parse_error(e.what(), line_no);
      }
    } else if (key == "op") {
      cfg.op = value;
    } else if (key == "mu") {
      double mu = detail::parse_number(value, line_no);
      if (mu < 0.0) throw parse_error("mu must be >= 0", line_no);
      cfg.mu = mu;
    } else if (key == "zeta") {
      double z = detail::parse_number(value, line_no);
      if (z < 0.0 || z > 1.0) throw parse_error("zeta must be in [0,1]", line_no);
      cfg.zeta = z;
    } else if (key == "sigma_y") {
      double s = detail::parse_number(value, line_no);
      if (s < 0.0) throw parse_error("sigma_y must be >= 0", line_no);
      cfg.sigma_y = s;
    } else if (key == "seed") {
      try {
        cfg.seed = std::stoull(value);
      } catch (const std::exception&) {
        throw parse_error("expected an unsigned integer seed", line_no);
      }
    } else if (key == "steps") {
      cfg.steps = static_cast<int>(detail::parse_number(value, line_no));
      if (*cfg.steps < 1) throw parse_error("steps must be >= 1", line_no);
    } else if (key == "snapshot_stride") {
      double v = detail::parse_number(value, line_no);
      if (v < 0) throw parse_error("snapshot_stride must be >= 0", line_no);
      cfg.snapshot_stride = static_cast<std::size_t>(v);
    } else if (key == "mean_correction") {
      cfg.mean_correction = detail::parse_bool(value, line_no);
    } else if (key == "jacobian_term") {
      cfg.jacobian_term = detail::parse_bool(value, line_no);
    } else if (key == "denoiser") {
      if (value != "analytic" && value != "external")
        throw parse_error("denoiser must be 'analytic' or 'external'", line_no);
      cfg.denoiser = value;
    } else if (key == "prior_mean") {
      cfg.prior_mean = detail::parse_number(value, line_no);
    } else if (key == "prior_var") {
      cfg.prior_var = detail::parse_number(value, line_no);
      if (cfg.prior_var <= 0.0) throw parse_error("prior_var must be > 0", line_no);
    } else if (key == "prior_mean_file") {
      detail::require_file(value, line_no);
      cfg.prior_mean_file = value;
    } else if (key == "prior_var_file") {
      detail::require_file(value, line_no);
      cfg.prior_var_file = value;
    } else if (key == "external_cmd") {
      cfg.external_cmd = value;
    } else if (key == "rho") {
      cfg.rho = detail::parse_number(value, line_no);
      if (cfg.rho < 0.0) throw parse_error("rho must be >= 0", line_no);
    } else if (key == "clamp_min") {
      cfg.clamp_min = detail::parse_number(value, line_no);
    } else if (key == "clamp_max") {
      cfg.clamp_max = detail::parse_number(value, line_no);
    } else {
      throw parse_error("unknown key '" + key + "'", line_no);
    }
  }
  if (!(cfg.beta_start > 0.0 && cfg.beta_start <= cfg.beta_end && cfg.beta_end < 1.0))
    throw parse_error("need 0 < beta_start <= beta_end < 1", line_no);
  if (cfg.steps && *cfg.steps > cfg.T)
    throw parse_error("steps must be <= T", line_no);
  if (cfg.clamp_min >= cfg.clamp_max)
    throw parse_error("clamp_min must be < clamp_max", line_no);
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// per-task default hyperparameters (mu, zeta)
// ---------------------------------------------------------------------------

struct MuZeta {
  double mu;
  double zeta;
};

// Defaults for the shipped degradation configurations; anything without a
// preset falls back to (1, 1).
inline MuZeta default_mu_zeta(const OperatorDescriptor& op, double sigma_y) {
  auto near = [](double a, double b) { return std::abs(a - b) < 1e-6; };
  const std::string& k = op.kind;
  if (k == "avgpool" || k == "bicubic") {
    if (near(sigma_y, 0.0)) return {1.6, 0.75};
    if (near(sigma_y, 0.05)) return {1.25, 0.9};
  } else if (k == "blur_gauss") {
    if (near(sigma_y, 0.0)) return {0.95, 1.0};
    if (near(sigma_y, 0.05) || near(sigma_y, 0.1)) return {1.0, 0.8};
  } else if (k == "blur_motion") {
    if (near(sigma_y, 0.05) || near(sigma_y, 0.1)) return {1.0, 0.8};
  } else if (k == "identity") {
    if (near(sigma_y, 0.1)) return {0.7, 1.0};
    if (near(sigma_y, 0.25)) return {1.0, 1.0};
    if (near(sigma_y, 0.5)) return {1.2, 1.0};
  } else if (k == "cs") {
    double ratio = descriptor_param(op, "ratio", -1.0);
    if (near(ratio, 0.05)) {
      if (near(sigma_y, 0.0) || near(sigma_y, 0.05)) return {3.5, 1.0};
    } else if (near(ratio, 0.10)) {
      if (near(sigma_y, 0.0)) return {3.0, 1.0};
      if (near(sigma_y, 0.05)) return {2.2, 1.0};
    } else if (near(ratio, 0.25)) {
      if (near(sigma_y, 0.0)) return {2.25, 1.0};
      if (near(sigma_y, 0.05)) return {1.35, 1.0};
    }
  }
  return {1.0, 1.0};
}

}  // namespace nrlg
