#include "circuitscope/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "circuitscope/error.hpp"
#include "circuitscope/rng.hpp"
#include "json.hpp"

namespace circuitscope {

using nlohmann::json;

namespace {

constexpr char kMagic[5] = {'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

}  // namespace

ParamLayout::ParamLayout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model;
  const std::size_t dh = c.d_head();
  const std::size_t H = c.n_heads;
  const std::size_t V = c.vocab_size;
  const std::size_t S = c.max_seq_len;
  const std::size_t F = c.d_mlp;

  auto add = [this](std::string name, std::vector<std::size_t> shape) {
    std::size_t size = 1;
    for (auto s : shape) size *= s;
    entries_.push_back({std::move(name), std::move(shape), total_, size});
    total_ += size;
  };

  add("embed.W_E", {V, d});
  add("embed.W_pos", {S, d});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    add(p + "ln1.w", {d});
    add(p + "ln1.b", {d});
    add(p + "attn.W_Q", {H, d, dh});
    add(p + "attn.b_Q", {H, dh});
    add(p + "attn.W_K", {H, d, dh});
    add(p + "attn.b_K", {H, dh});
    add(p + "attn.W_V", {H, d, dh});
    add(p + "attn.b_V", {H, dh});
    add(p + "attn.W_O", {H, dh, d});
    add(p + "ln2.w", {d});
    add(p + "ln2.b", {d});
    add(p + "mlp.W_in", {d, F});
    add(p + "mlp.b_in", {F});
    add(p + "mlp.W_out", {F, d});
    add(p + "mlp.b_out", {d});
  }
  add("ln_final.w", {d});
  add("ln_final.b", {d});
  add("unembed.W_U", {d, V});
}

const ParamEntry& ParamLayout::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  fail(Errc::invalid_argument, "no parameter named " + name);
}

ParamOffsets::ParamOffsets(const ModelConfig& c) {
  const ParamLayout layout(c);
  auto off = [&](const std::string& n) { return layout.at(n).offset; };
  const std::size_t d = c.d_model;
  const std::size_t dh = c.d_head();
  w_e = off("embed.W_E");
  w_pos = off("embed.W_pos");
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    LayerOffsets lo{};
    lo.ln1_w = off(p + "ln1.w");
    lo.ln1_b = off(p + "ln1.b");
    for (std::size_t h = 0; h < static_cast<std::size_t>(c.n_heads); ++h) {
      lo.heads.push_back(HeadOffsets{
          off(p + "attn.W_Q") + h * d * dh, off(p + "attn.b_Q") + h * dh,
          off(p + "attn.W_K") + h * d * dh, off(p + "attn.b_K") + h * dh,
          off(p + "attn.W_V") + h * d * dh, off(p + "attn.b_V") + h * dh,
          off(p + "attn.W_O") + h * dh * d});
    }
    lo.ln2_w = off(p + "ln2.w");
    lo.ln2_b = off(p + "ln2.b");
    lo.w_in = off(p + "mlp.W_in");
    lo.b_in = off(p + "mlp.b_in");
    lo.w_out = off(p + "mlp.W_out");
    lo.b_out = off(p + "mlp.b_out");
    layers.push_back(std::move(lo));
  }
  lnf_w = off("ln_final.w");
  lnf_b = off("ln_final.b");
  w_u = off("unembed.W_U");
  total = layout.total();
}

Checkpoint build_model(const ModelConfig& config) {
  const ParamLayout layout(config);
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.params.assign(layout.total(), 0.0f);

  constexpr double kStd = 0.02;
  const double out_std = kStd / std::sqrt(2.0 * config.n_layers);
  Rng rng(config.seed);
  for (const auto& e : layout.entries()) {
    float* p = ckpt.params.data() + e.offset;
    const std::string& n = e.name;
    const auto ends_with = [&](std::string_view suffix) {
      return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".w") && (n.find("ln") != std::string::npos)) {
      std::fill(p, p + e.size, 1.0f);
    } else if (ends_with(".b") || n.find(".b_") != std::string::npos) {
      std::fill(p, p + e.size, 0.0f);
    } else {
      const double std = (ends_with("W_O") || ends_with("W_out")) ? out_std : kStd;
      for (std::size_t i = 0; i < e.size; ++i) p[i] = static_cast<float>(std * rng.normal());
    }
  }
  return ckpt;
}

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
              {"d_model", c.d_model},     {"d_mlp", c.d_mlp},
              {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_mlp = j.at("d_mlp").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const ParamLayout layout(ckpt.config);
  if (ckpt.params.size() != layout.total()) {
    fail(Errc::shape_mismatch, "parameter count " + std::to_string(ckpt.params.size()) +
                                   " does not match layout total " + std::to_string(layout.total()));
  }
  json layout_json = json::array();
  for (const auto& e : layout.entries()) {
    layout_json.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
  }
  const json header{{"format_version", kFormatVersion},
                    {"config", config_to_json(ckpt.config)},
                    {"step", ckpt.step},
                    {"tokens_seen", ckpt.tokens_seen},
                    {"training", {{"batch_size", ckpt.training.batch_size},
                                  {"seq_len", ckpt.training.seq_len}}},
                    {"layout", layout_json}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(sizeof(kMagic) + 4 + text.size() + 4 * ckpt.params.size());
  out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((len >> (8 * i)) & 0xFF));
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t at = out.size();
  out.resize(at + 4 * ckpt.params.size());
  std::memcpy(out.data() + at, ckpt.params.data(), 4 * ckpt.params.size());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) + 4) fail(Errc::schema_violation, "checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(Errc::schema_violation, "not a checkpoint file (bad magic)");
  }
  if (bytes[4] != static_cast<std::uint8_t>(kMagic[4])) {
    fail(Errc::version_mismatch, "unsupported checkpoint magic version");
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[5 + i]) << (8 * i);
  const std::size_t header_at = sizeof(kMagic) + 4;
  if (bytes.size() < header_at + len) fail(Errc::schema_violation, "checkpoint header truncated");

  json header;
  try {
    header = json::parse(bytes.begin() + header_at, bytes.begin() + header_at + len);
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kFormatVersion) {
      fail(Errc::version_mismatch, "checkpoint format_version " + std::to_string(version) +
                                       " is not supported");
    }
    ckpt.config = config_from_json(header.at("config"));
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.tokens_seen = header.at("tokens_seen").get<std::int64_t>();
    ckpt.training.batch_size = header.at("training").at("batch_size").get<int>();
    ckpt.training.seq_len = header.at("training").at("seq_len").get<int>();
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("checkpoint header: ") + e.what());
  }
  try {
    ckpt.config.validate();
  } catch (const Error& e) {
    fail(Errc::schema_violation, std::string("checkpoint config: ") + e.what());
  }

  const ParamLayout layout(ckpt.config);
  const json& lj = header.at("layout");
  if (!lj.is_array() || lj.size() != layout.entries().size()) {
    fail(Errc::schema_violation, "checkpoint layout table does not match config");
  }
  for (std::size_t i = 0; i < lj.size(); ++i) {
    const auto& e = layout.entries()[i];
    if (lj[i].at("name").get<std::string>() != e.name ||
        lj[i].at("shape").get<std::vector<std::size_t>>() != e.shape ||
        lj[i].at("offset").get<std::size_t>() != e.offset) {
      fail(Errc::schema_violation, "checkpoint layout entry " + std::to_string(i) + " mismatch");
    }
  }

  const std::size_t data_at = header_at + len;
  if (bytes.size() - data_at != 4 * layout.total()) {
    fail(Errc::schema_violation, "checkpoint payload has " + std::to_string(bytes.size() - data_at) +
                                     " bytes, expected " + std::to_string(4 * layout.total()));
  }
  ckpt.params.resize(layout.total());
  std::memcpy(ckpt.params.data(), bytes.data() + data_at, 4 * layout.total());
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::io_failure, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::missing_file, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::string checkpoint_filename(std::int64_t step) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "step_%08lld.ckpt", static_cast<long long>(step));
  return buf;
}

std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(Errc::missing_file, "no such directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ckpt") out.push_back(entry.path());
  }
  // Zero-padded names sort by step.
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace circuitscope
