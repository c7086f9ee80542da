#include "dvlo/params.hpp"

#include "dvlo/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dvlo {
namespace fs = std::filesystem;

void ModelParams::add(const std::string& name, int rows, int cols, std::vector<double> values) {
  if (contains(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, ad::Var::parameter(rows, cols, std::move(values))});
}

const ad::Var& ModelParams::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].var;
}

ad::Var& ModelParams::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].var;
}

std::size_t ModelParams::total_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.size();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& e : entries_) {
    out.add(e.name, e.var.rows(), e.var.cols(), std::vector<double>(e.var.value().begin(), e.var.value().end()));
  }
  return out;
}

bool ModelParams::identical(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.var.rows() != b.var.rows() || a.var.cols() != b.var.cols()) return false;
    if (std::memcmp(a.var.value().data(), b.var.value().data(), a.var.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

double Rng::normal() {
  // Box-Muller on the portable uniform stream.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void ParamBuilder::xavier(const std::string& name, int in, int out, double gain) {
  const double a = gain * std::sqrt(6.0 / (in + out));
  std::vector<double> v(static_cast<std::size_t>(in) * out);
  for (auto& x : v) x = rng_.uniform(-a, a);
  out_.add(name, in, out, std::move(v));
}

void ParamBuilder::zeros(const std::string& name, int rows, int cols) {
  out_.add(name, rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0));
}

void ParamBuilder::values(const std::string& name, int rows, int cols, std::vector<double> v) {
  out_.add(name, rows, cols, std::move(v));
}

void ParamBuilder::linear(const std::string& name, int in, int out, double gain) {
  xavier(name + ".w", in, out, gain);
  zeros(name + ".b", 1, out);
}

namespace {

void put_le(std::vector<char>& buf, const void* src, std::size_t n) {
  const auto* p = static_cast<const char*>(src);
  if constexpr (std::endian::native == std::endian::little) {
    buf.insert(buf.end(), p, p + n);
  } else {
    for (std::size_t i = 0; i < n; ++i) buf.push_back(p[n - 1 - i]);
  }
}

template <typename T>
T get_le(const char* p) {
  T v;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(&v, p, sizeof(T));
  } else {
    char tmp[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) tmp[i] = p[sizeof(T) - 1 - i];
    std::memcpy(&v, tmp, sizeof(T));
  }
  return v;
}

fs::path manifest_path(const fs::path& path) { return fs::path(path.string() + ".json"); }

}  // namespace

void write_tensor_file(const fs::path& path, TensorDtype dtype, const std::vector<NamedTensor>& tensors,
                       const nlohmann::json& meta) {
  std::vector<char> data;
  nlohmann::json manifest;
  manifest["format"] = "dvlo-tensors";
  manifest["version"] = 1;
  manifest["dtype"] = dtype == TensorDtype::kF32 ? "f32" : "f64";
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    manifest["tensors"].push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", data.size()}});
    for (double v : t.values) {
      if (dtype == TensorDtype::kF32) {
        const float f = static_cast<float>(v);
        put_le(data, &f, 4);
      } else {
        put_le(data, &v, 8);
      }
    }
  }
  manifest["bytes"] = data.size();
  manifest["meta"] = meta.is_null() ? nlohmann::json::object() : meta;

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  std::ofstream mout(manifest_path(path));
  if (!mout) throw IoError("cannot write " + manifest_path(path).string());
  mout << manifest.dump(2) << '\n';
  if (!out || !mout) throw IoError("write failed: " + path.string());
}

std::vector<NamedTensor> read_tensor_file(const fs::path& path, nlohmann::json* meta) {
  std::ifstream min(manifest_path(path));
  if (!min) throw IoError("cannot open " + manifest_path(path).string());
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path(path).string() + ": " + e.what());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    if (manifest.at("format") != "dvlo-tensors") throw FormatError(path.string() + ": not a tensor file");
    const std::string dtype = manifest.at("dtype");
    if (dtype != "f32" && dtype != "f64") throw FormatError(path.string() + ": unknown dtype " + dtype);
    const std::size_t width = dtype == "f32" ? 4 : 8;
    if (data.size() != manifest.at("bytes").get<std::size_t>()) {
      throw FormatError(path.string() + ": size does not match manifest");
    }
    std::vector<NamedTensor> out;
    for (const auto& t : manifest.at("tensors")) {
      NamedTensor nt;
      nt.name = t.at("name");
      nt.rows = t.at("shape").at(0);
      nt.cols = t.at("shape").at(1);
      const std::size_t offset = t.at("offset");
      const std::size_t count = static_cast<std::size_t>(nt.rows) * nt.cols;
      if (offset + count * width > data.size()) throw FormatError(path.string() + ": tensor out of range");
      nt.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const char* p = data.data() + offset + i * width;
        nt.values[i] = width == 4 ? static_cast<double>(get_le<float>(p)) : get_le<double>(p);
      }
      out.push_back(std::move(nt));
    }
    if (meta) *meta = manifest.value("meta", nlohmann::json::object());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path(path).string() + ": " + e.what());
  }
}

void save_checkpoint(const ModelParams& params, const fs::path& path) {
  std::vector<NamedTensor> tensors;
  for (const auto& e : params.entries()) {
    tensors.push_back({e.name, e.var.rows(), e.var.cols(),
                       std::vector<double>(e.var.value().begin(), e.var.value().end())});
  }
  write_tensor_file(path, TensorDtype::kF32, tensors, {{"kind", "model"}});
}

void assign_tensors(ModelParams& params, const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  std::size_t matched = 0;
  for (const auto& t : tensors) {
    if (t.name.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string name = t.name.substr(prefix.size());
    if (!params.contains(name)) throw FormatError("checkpoint tensor " + name + " is not a model parameter");
    ad::Var& v = params.get(name);
    if (v.rows() != t.rows || v.cols() != t.cols) {
      throw FormatError("checkpoint tensor " + name + " has shape " + std::to_string(t.rows) + "x" +
                        std::to_string(t.cols) + ", model expects " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()));
    }
    std::copy(t.values.begin(), t.values.end(), v.mutable_value().begin());
    ++matched;
  }
  if (matched != params.entries().size()) {
    throw FormatError("checkpoint covers " + std::to_string(matched) + " of " +
                      std::to_string(params.entries().size()) + " parameters");
  }
}

ModelParams load_checkpoint(const fs::path& path, const Config& cfg) {
  ModelParams params = init_params(cfg, 0);
  assign_tensors(params, read_tensor_file(path));
  return params;
}

}  // namespace dvlo
