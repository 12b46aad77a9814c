#include "mvrec/formats.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mvrec {

namespace {

std::ofstream open_out(const std::string& path, bool binary = true) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw DataError("cannot write " + path);
  return f;
}

std::ifstream open_in(const std::string& path, bool binary = true) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw DataError("cannot read " + path);
  return f;
}

template <class T>
void put_le(std::ofstream& f, T v) {
  // this artifact targets little-endian hosts; stated in the format docs
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get_le(std::ifstream& f, const std::string& path) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw DataError("truncated file " + path);
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_ppm(const std::string& path, const std::vector<double>& rgb, int width, int height) {
  size_t hw = (size_t)width * height;
  if (rgb.size() != 3 * hw) throw DataError("write_ppm: size mismatch for " + path);
  std::ofstream f = open_out(path);
  f << "P6\n" << width << " " << height << "\n255\n";
  std::vector<uint8_t> row(3 * (size_t)width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      size_t p = (size_t)y * width + x;
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(rgb[c * hw + p], 0.0, 1.0);
        row[(size_t)x * 3 + c] = (uint8_t)std::lround(v * 255.0);
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), (std::streamsize)row.size());
  }
  if (!f) throw DataError("write failed for " + path);
}

std::vector<double> read_ppm(const std::string& path, int& width, int& height) {
  std::ifstream f = open_in(path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw DataError(path + ": not a binary PPM");
  auto skip_ws_comments = [&]() {
    while (true) {
      int c = f.peek();
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
  };
  int maxval;
  skip_ws_comments();
  f >> width;
  skip_ws_comments();
  f >> height;
  skip_ws_comments();
  f >> maxval;
  f.get();  // single whitespace after header
  if (width <= 0 || height <= 0 || maxval != 255) throw DataError(path + ": unsupported PPM");
  size_t hw = (size_t)width * height;
  std::vector<uint8_t> raw(3 * hw);
  f.read(reinterpret_cast<char*>(raw.data()), (std::streamsize)raw.size());
  if (!f) throw DataError(path + ": truncated PPM payload");
  std::vector<double> rgb(3 * hw);
  for (size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) rgb[c * hw + p] = raw[p * 3 + c] / 255.0;
  return rgb;
}

void write_depth_raw(const std::string& path, const std::vector<double>& depth, int width,
                     int height) {
  if (depth.size() != (size_t)width * height || width > 65535 || height > 65535)
    throw DataError("write_depth_raw: bad dimensions for " + path);
  std::ofstream f = open_out(path);
  f.write("DPTH", 4);
  put_le<uint16_t>(f, (uint16_t)width);
  put_le<uint16_t>(f, (uint16_t)height);
  for (double d : depth) put_le<float>(f, (float)d);
  if (!f) throw DataError("write failed for " + path);
}

std::vector<double> read_depth_raw(const std::string& path, int& width, int& height) {
  std::ifstream f = open_in(path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "DPTH", 4) != 0) throw DataError(path + ": not a DPTH file");
  width = get_le<uint16_t>(f, path);
  height = get_le<uint16_t>(f, path);
  std::vector<double> depth((size_t)width * height);
  for (double& d : depth) d = get_le<float>(f, path);
  return depth;
}

void write_ply(const std::string& path, const std::vector<PlyPoint>& points) {
  std::ofstream f = open_out(path);
  f << "ply\nformat binary_little_endian 1.0\n";
  f << "element vertex " << points.size() << "\n";
  f << "property float x\nproperty float y\nproperty float z\n";
  f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "property float confidence\nend_header\n";
  for (const PlyPoint& p : points) {
    put_le<float>(f, p.x);
    put_le<float>(f, p.y);
    put_le<float>(f, p.z);
    f.put((char)p.r);
    f.put((char)p.g);
    f.put((char)p.b);
    put_le<float>(f, p.confidence);
  }
  if (!f) throw DataError("write failed for " + path);
}

Weights weight_registry(const ModelConfig& cfg) {
  // Identical name/shape layout to a real initialization; values irrelevant.
  Weights w = init_weights(cfg, 0);
  for (auto& [name, t] : w.params) t = Tensor::zeros(t.shape);
  return w;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const Weights& w,
                     const std::map<std::string, std::string>& extra_config) {
  KvSections kv;
  kv["model"] = cfg.to_kv();
  if (!extra_config.empty()) kv["extra"] = extra_config;
  std::string cfg_text = serialize_kv(kv);

  std::ofstream f = open_out(path);
  f.write("MVPK1", 5);
  put_le<uint32_t>(f, (uint32_t)cfg_text.size());
  f.write(cfg_text.data(), (std::streamsize)cfg_text.size());
  put_le<uint32_t>(f, (uint32_t)w.params.size());
  uint64_t offset = 0;
  for (const auto& [name, t] : w.params) {
    put_le<uint16_t>(f, (uint16_t)name.size());
    f.write(name.data(), (std::streamsize)name.size());
    f.put((char)0);  // dtype f64
    f.put((char)t.shape.size());
    for (int d : t.shape) put_le<uint32_t>(f, (uint32_t)d);
    put_le<uint64_t>(f, offset);
    offset += (uint64_t)t.size() * sizeof(double);
  }
  put_le<uint64_t>(f, offset);
  for (const auto& [name, t] : w.params)
    f.write(reinterpret_cast<const char*>(t.ptr()), (std::streamsize)(t.size() * sizeof(double)));
  if (!f) throw DataError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f = open_in(path);
  char magic[5];
  f.read(magic, 5);
  if (!f || std::memcmp(magic, "MVPK1", 5) != 0)
    throw DataError(path + ": not an MVPK1 checkpoint");
  uint32_t cfg_len = get_le<uint32_t>(f, path);
  std::string cfg_text(cfg_len, '\0');
  f.read(cfg_text.data(), cfg_len);
  if (!f) throw DataError(path + ": truncated config block");
  KvSections kv = parse_kv_text(cfg_text, path);

  Checkpoint ck;
  ck.cfg = ModelConfig::from_kv(kv["model"]);
  if (kv.count("extra")) ck.extra_config = kv["extra"];
  ck.weights = weight_registry(ck.cfg);

  uint32_t n_tensors = get_le<uint32_t>(f, path);
  struct Entry {
    std::string name;
    Shape shape;
    uint64_t offset;
  };
  std::vector<Entry> entries(n_tensors);
  for (auto& e : entries) {
    uint16_t len = get_le<uint16_t>(f, path);
    e.name.resize(len);
    f.read(e.name.data(), len);
    uint8_t dtype = get_le<uint8_t>(f, path);
    if (dtype != 0) throw DataError(path + ": unsupported dtype for " + e.name);
    uint8_t rank = get_le<uint8_t>(f, path);
    e.shape.resize(rank);
    for (int i = 0; i < rank; ++i) e.shape[i] = (int)get_le<uint32_t>(f, path);
    e.offset = get_le<uint64_t>(f, path);
  }
  uint64_t payload_len = get_le<uint64_t>(f, path);
  (void)payload_len;

  std::vector<uint8_t> seen(ck.weights.params.size(), 0);
  std::streampos payload_start = f.tellg();
  for (const Entry& e : entries) {
    if (!ck.weights.has(e.name)) throw DataError(path + ": unknown parameter " + e.name);
    int idx = ck.weights.index.at(e.name);
    if (seen[idx]) throw DataError(path + ": duplicate parameter " + e.name);
    seen[idx] = 1;
    Tensor& dst = ck.weights.params[idx].second;
    if (dst.shape != e.shape) throw DataError(path + ": shape mismatch for " + e.name);
    f.seekg(payload_start + (std::streampos)e.offset);
    f.read(reinterpret_cast<char*>(dst.ptr()), (std::streamsize)(dst.size() * sizeof(double)));
    if (!f) throw DataError(path + ": truncated payload at " + e.name);
  }
  for (size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw DataError(path + ": missing parameter " + ck.weights.params[i].first);
  return ck;
}

KvSections parse_kv_text(const std::string& text, const std::string& origin) {
  KvSections out;
  std::string section;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    size_t b = line.find_last_not_of(" \t\r");
    std::string s = line.substr(a, b - a + 1);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw DataError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = s.substr(1, s.size() - 2);
      out[section];
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw DataError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = s.substr(0, eq);
    std::string val = s.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    size_t v0 = val.find_first_not_of(" \t");
    val = v0 == std::string::npos ? "" : val.substr(v0);
    if (key.empty())
      throw DataError(origin + ":" + std::to_string(lineno) + ": empty key");
    out[section][key] = val;
  }
  return out;
}

KvSections parse_kv_file(const std::string& path) { return parse_kv_text(read_text_file(path), path); }

std::string serialize_kv(const KvSections& kv) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [section, entries] : kv) {
    if (!first) os << "\n";
    first = false;
    if (!section.empty()) os << "[" << section << "]\n";
    for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
  }
  return os.str();
}

std::string read_text_file(const std::string& path) {
  std::ifstream f = open_in(path, false);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f = open_out(path, false);
  f << text;
  if (!f) throw DataError("write failed for " + path);
}

void append_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw DataError("cannot append to " + path);
  f << text;
}

}  // namespace mvrec
