#include "circuitscope/intervention.hpp"

#include "circuitscope/error.hpp"
#include "circuitscope/io.hpp"
#include "circuitscope/parallel.hpp"

namespace circuitscope {

std::vector<HeadId> all_heads(const ModelConfig& config) {
  std::vector<HeadId> out;
  for (int l = 0; l < config.n_layers; ++l)
    for (int h = 0; h < config.n_heads; ++h) out.push_back({l, h});
  return out;
}

namespace {

void check_spec(const Model& model, const PatchSpec& spec) {
  if (spec.clean == nullptr || spec.altered == nullptr) fail(Errc::missing_inputs, "patch spec lacks datasets");
  const auto& a = spec.clean->examples;
  const auto& b = spec.altered->examples;
  if (a.empty()) fail(Errc::empty_dataset, "path patching needs at least one example");
  if (a.size() != b.size()) fail(Errc::misaligned_datasets, "clean and altered datasets differ in size");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].clean.size() != b[i].clean.size()) {
      fail(Errc::misaligned_datasets, "example " + std::to_string(i) + " differs in length");
    }
  }
  const auto& cfg = model.config();
  if (spec.sender.kind != NodeKind::AttnHead || spec.sender.layer >= cfg.n_layers ||
      spec.sender.head >= cfg.n_heads || spec.sender.layer < 0 || spec.sender.head < 0) {
    fail(Errc::invalid_argument, "sender must be an attention head of the model");
  }
  if (spec.receivers.empty()) fail(Errc::invalid_receiver, "no receivers given");
  for (const auto& r : spec.receivers) {
    if (!channel_valid_for(r.node, r.channel)) fail(Errc::invalid_receiver, "channel not valid for receiver");
    if (r.node.kind == NodeKind::AttnHead && (r.node.layer >= cfg.n_layers || r.node.head >= cfg.n_heads)) {
      fail(Errc::invalid_receiver, "receiver " + r.node.name() + " outside the model");
    }
    if (r.node.kind == NodeKind::Mlp && r.node.layer >= cfg.n_layers) {
      fail(Errc::invalid_receiver, "receiver " + r.node.name() + " outside the model");
    }
    if (!model.graph().is_upstream(spec.sender, r.node)) {
      fail(Errc::invalid_receiver, "receiver " + r.node.name() + " is not downstream of " + spec.sender.name());
    }
  }
}

}  // namespace

std::vector<PatchRun> path_patch_runs(const Model& model, const PatchSpec& spec) {
  check_spec(model, spec);
  spec.clean->validate(model.config().vocab_size);
  spec.altered->validate(model.config().vocab_size);
  const auto& g = model.graph();
  const std::size_t sender = g.node_index(spec.sender);
  std::vector<std::size_t> recv;
  for (const auto& r : spec.receivers) recv.push_back(g.receiver_index(r));

  std::vector<PatchRun> runs(spec.clean->examples.size());
  parallel_for(runs.size(), [&](std::size_t i) {
    const auto& ex = spec.clean->examples[i];
    PatchRun& run = runs[i];
    run.clean = forward(model, ex.clean);
    const auto altered = forward(model, spec.altered->examples[i].clean);

    Interventions freeze;
    freeze.node.assign(g.nodes().size(), nullptr);
    for (std::size_t n = 0; n < g.nodes().size(); ++n) {
      if (g.nodes()[n].kind != NodeKind::AttnHead) continue;
      freeze.node[n] = n == sender ? &altered.node_out[n] : &run.clean.node_out[n];
    }
    const auto phase2 = run_forward(model, ex.clean, freeze);

    Interventions patch;
    patch.receiver.assign(g.receivers().size(), nullptr);
    for (std::size_t r : recv) patch.receiver[r] = &phase2.receiver_in[r];
    run.patched = run_forward(model, ex.clean, patch);
    run.clean_metric = evaluate_metric(ex.metric, run.clean.logits.row(ex.answer_position));
    run.patched_metric = evaluate_metric(ex.metric, run.patched.logits.row(ex.answer_position));
  });
  return runs;
}

double path_patch(const Model& model, const PatchSpec& spec) {
  const auto runs = path_patch_runs(model, spec);
  double sum = 0.0;
  for (const auto& r : runs) sum += r.patched_metric - r.clean_metric;
  return sum / static_cast<double>(runs.size());
}

TaskDataset corrupted_view(const TaskDataset& dataset) {
  TaskDataset out = dataset;
  for (auto& ex : out.examples) ex.clean = ex.corrupt;
  return out;
}

double direct_effect(const Model& model, HeadId head, const TaskDataset& dataset) {
  const TaskDataset altered = corrupted_view(dataset);
  const PatchSpec spec{head.node(), {Receiver{NodeId::logits(), Channel::LogitsIn}}, &dataset, &altered};
  return path_patch(model, spec);
}

Matrix attention_pattern(const Model& model, std::span<const int> tokens, HeadId head) {
  const auto& cfg = model.config();
  if (head.layer < 0 || head.layer >= cfg.n_layers || head.head < 0 || head.head >= cfg.n_heads) {
    fail(Errc::invalid_argument, "head " + head.name() + " outside the model");
  }
  return forward(model, tokens).attention(cfg.n_heads, head.layer, head.head);
}

std::string receiver_set_name(const std::vector<Receiver>& receivers) {
  std::string out;
  for (const auto& r : receivers) {
    if (!out.empty()) out += '|';
    if (r.node.kind == NodeKind::Logits) {
      out += "logits";
    } else {
      out += r.node.name() + "." + std::string(to_string(r.channel));
    }
  }
  return out;
}

void write_effects_csv(const std::filesystem::path& path, const std::vector<EffectRow>& rows) {
  CsvWriter csv(path, columns::effects());
  for (const auto& r : rows) {
    csv.row({std::to_string(r.head.layer), std::to_string(r.head.head), r.receiver_set, format_double(r.effect)});
  }
  csv.close();
}

std::vector<EffectRow> read_effects_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path, columns::effects());
  std::vector<EffectRow> out;
  for (const auto& row : t.rows) {
    out.push_back({{std::stoi(row[0]), std::stoi(row[1])}, row[2], parse_double(row[3])});
  }
  return out;
}

}  // namespace circuitscope
