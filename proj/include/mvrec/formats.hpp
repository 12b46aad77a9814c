#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvrec/model.hpp"

namespace mvrec {

// File or parse problems carrying path context; maps to exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- images: binary PPM (P6, 8-bit) ----
void write_ppm(const std::string& path, const std::vector<double>& rgb, int width, int height);
std::vector<double> read_ppm(const std::string& path, int& width, int& height);

// ---- depth: magic "DPTH", u16 width, u16 height, f32 data, little-endian ----
void write_depth_raw(const std::string& path, const std::vector<double>& depth, int width,
                     int height);
std::vector<double> read_depth_raw(const std::string& path, int& width, int& height);

// ---- point clouds: binary little-endian PLY ----
struct PlyPoint {
  float x, y, z;
  uint8_t r, g, b;
  float confidence;
};
void write_ply(const std::string& path, const std::vector<PlyPoint>& points);

// ---- checkpoints: magic "MVPK1" ----
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const Weights& w,
                     const std::map<std::string, std::string>& extra_config = {});
struct Checkpoint {
  ModelConfig cfg;
  Weights weights;
  std::map<std::string, std::string> extra_config;
};
Checkpoint load_checkpoint(const std::string& path);

// Zero-valued registry with every parameter the config implies; checkpoint
// loading fills it and rejects unknown or missing names.
Weights weight_registry(const ModelConfig& cfg);

// ---- structured text: key = value with [sections] ----
using KvSections = std::map<std::string, std::map<std::string, std::string>>;
KvSections parse_kv_text(const std::string& text, const std::string& origin = "<string>");
KvSections parse_kv_file(const std::string& path);
std::string serialize_kv(const KvSections& kv);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
void append_text_file(const std::string& path, const std::string& text);

std::string format_double(double v);  // round-trip exact

}  // namespace mvrec
