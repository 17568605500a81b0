#include "catflow/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace catflow {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'A', 'T', 'F', 'L', 'O', 'W', '1'};

struct Entry {
  std::string name;
  const Matrix* value;
};

std::vector<Entry> entries(const ModelState& s) {
  std::vector<Entry> out;
  const auto params = s.trainables();
  for (const auto* p : params) out.push_back({p->name, &p->value});
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"ema/" + params[i]->name, &s.ema[i]});
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"adam_m/" + params[i]->name, &s.adam_m[i]});
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"adam_v/" + params[i]->name, &s.adam_v[i]});
  return out;
}

std::vector<Matrix*> mutable_slots(ModelState& s) {
  std::vector<Matrix*> out;
  auto params = s.trainables();
  for (auto* p : params) out.push_back(&p->value);
  for (auto& m : s.ema) out.push_back(&m);
  for (auto& m : s.adam_m) out.push_back(&m);
  for (auto& m : s.adam_v) out.push_back(&m);
  return out;
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_doubles(std::ostream& os, const Matrix& m) {
  static_assert(sizeof(double) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * 8));
  } else {
    for (Eigen::Index i = 0; i < m.size(); ++i) put_u64(os, std::bit_cast<std::uint64_t>(m.data()[i]));
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state) {
  json header;
  header["format_version"] = kCheckpointVersion;
  header["dtype"] = "float64";
  header["endianness"] = "little";
  header["step"] = state.step;
  header["sc_passes"] = state.sc_passes;
  header["config"] = json::parse(to_json(state.config));
  header["vocab_size"] = state.params.shape.vocab_size;
  header["dim"] = state.params.shape.dim;
  header["rng_state"] = state.rng.serialize();
  json tensors = json::array();
  std::uint64_t offset = 0;
  const auto list = entries(state);
  for (const auto& e : list) {
    const auto count = static_cast<std::uint64_t>(e.value->size());
    tensors.push_back({{"name", e.name},
                       {"shape", {e.value->rows(), e.value->cols()}},
                       {"offset", offset},
                       {"count", count}});
    offset += count;
  }
  header["tensors"] = tensors;
  header["payload_values"] = offset;
  const std::string text = header.dump();

  const std::filesystem::path target(path);
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("save_checkpoint: cannot open " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : list) write_doubles(os, *e.value);
    os.flush();
    if (!os) throw CheckpointError("save_checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw CheckpointError("save_checkpoint: rename to " + path + " failed: " + ec.message());
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("load_checkpoint: cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("load_checkpoint: " + path + " is not a checkpoint (bad magic or truncated)");
  }
  const std::uint64_t header_len = get_u64(reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
  if (header_len > bytes.size() - 16) throw CheckpointError("load_checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("load_checkpoint: malformed header: ") + e.what());
  }

  ModelState state;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("load_checkpoint: format version " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
    if (header.at("dtype") != "float64" || header.at("endianness") != "little") {
      throw CheckpointError("load_checkpoint: unsupported dtype or endianness");
    }
    const TrainConfig config = train_config_from_json(header.at("config").dump());
    state = ModelState::create(config, header.at("vocab_size").get<int>(), header.at("dim").get<int>());
    state.step = header.at("step").get<long>();
    state.sc_passes = header.at("sc_passes").get<long>();
    state.rng.deserialize(header.at("rng_state").get<std::string>());

    const auto slots = mutable_slots(state);
    const auto names = entries(state);
    const json& tensors = header.at("tensors");
    if (tensors.size() != slots.size()) {
      throw CheckpointError("load_checkpoint: expected " + std::to_string(slots.size()) + " tensors, found " +
                            std::to_string(tensors.size()));
    }
    const std::uint64_t total = header.at("payload_values").get<std::uint64_t>();
    const std::uint64_t payload_start = 16 + header_len;
    if (bytes.size() - payload_start != total * 8) {
      throw CheckpointError("load_checkpoint: payload is " + std::to_string(bytes.size() - payload_start) +
                            " bytes, header declares " + std::to_string(total * 8) + " (truncated or corrupt)");
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const json& t = tensors[i];
      Matrix& dst = *slots[i];
      const std::string name = t.at("name").get<std::string>();
      if (name != names[i].name) throw CheckpointError("load_checkpoint: tensor " + name + " out of order");
      const auto shape = t.at("shape").get<std::vector<long>>();
      if (shape.size() != 2 || shape[0] != dst.rows() || shape[1] != dst.cols()) {
        throw CheckpointError("load_checkpoint: shape mismatch for " + name);
      }
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto count = t.at("count").get<std::uint64_t>();
      if (count != static_cast<std::uint64_t>(dst.size()) || offset + count > total) {
        throw CheckpointError("load_checkpoint: bad extent for " + name);
      }
      const auto* src = reinterpret_cast<const unsigned char*>(bytes.data()) + payload_start + offset * 8;
      for (std::uint64_t k = 0; k < count; ++k) dst.data()[k] = std::bit_cast<double>(get_u64(src + 8 * k));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("load_checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("load_checkpoint: bad config: ") + e.what());
  }
  return state;
}

bool same_state(const ModelState& a, const ModelState& b) {
  if (a.step != b.step || a.sc_passes != b.sc_passes || !(a.rng == b.rng)) return false;
  if (to_json(a.config) != to_json(b.config)) return false;
  const auto ea = entries(a);
  const auto eb = entries(b);
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    if (ea[i].name != eb[i].name) return false;
    const Matrix& x = *ea[i].value;
    const Matrix& y = *eb[i].value;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace catflow
