#include "sedt/runconfig.hpp"

#include "sedt/checkpoint.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace sedt {

using nlohmann::json;

namespace {

std::string carrier_to_string(CarrierKind k) {
  switch (k) {
    case CarrierKind::kTone: return "tone";
    case CarrierKind::kChirp: return "chirp";
    case CarrierKind::kNoiseBurst: return "noise-burst";
  }
  throw std::logic_error("unreachable carrier kind");
}

CarrierKind carrier_from_string(const std::string& s) {
  if (s == "tone") return CarrierKind::kTone;
  if (s == "chirp") return CarrierKind::kChirp;
  if (s == "noise-burst") return CarrierKind::kNoiseBurst;
  throw std::invalid_argument("unknown carrier kind: " + s);
}

json to_json_tree(const RunConfig& cfg) {
  json j;
  j["version"] = 1;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["cache_dir"] = cfg.cache_dir;

  json data;
  data["sample_rate_hz"] = cfg.synth.sample_rate_hz;
  data["clip_duration_sec"] = cfg.synth.clip_duration_sec;
  data["events_per_clip"] = {cfg.synth.events_per_clip.first,
                             cfg.synth.events_per_clip.second};
  data["snr_db"] = {cfg.synth.snr_db_range.first, cfg.synth.snr_db_range.second};
  data["min_same_class_gap_sec"] = cfg.synth.min_same_class_gap_sec;
  data["classes"] = json::array();
  for (const auto& c : cfg.synth.classes) {
    data["classes"].push_back({{"label", c.label},
                               {"carrier", carrier_to_string(c.carrier)},
                               {"freq_hz", {c.freq_range_hz.first, c.freq_range_hz.second}},
                               {"duration_sec", {c.duration_range_sec.first,
                                                 c.duration_range_sec.second}}});
  }
  data["n_mels"] = cfg.mel.n_mels;
  data["hop_sec"] = cfg.mel.hop_sec;
  data["win_sec"] = cfg.mel.win_sec;
  data["log_floor"] = cfg.mel.log_floor;
  j["data"] = data;

  json model;
  model["d_model"] = cfg.model.d_model;
  model["n_encoder_blocks"] = cfg.model.n_encoder_blocks;
  model["n_decoder_blocks"] = cfg.model.n_decoder_blocks;
  model["n_heads"] = cfg.model.n_heads;
  model["n_queries"] = cfg.model.n_queries;
  model["n_patches"] = cfg.model.n_patches;
  model["ffn_hidden"] = cfg.model.ffn_hidden;
  model["gn_groups"] = cfg.model.gn_groups;
  model["backbone_channels"] = cfg.model.backbone_channels;
  model["backbone_strides"] = json::array();
  for (auto& [st, sf] : cfg.model.backbone_strides)
    model["backbone_strides"].push_back({st, sf});
  j["model"] = model;

  json pre;
  pre["epochs"] = cfg.pretrain.epochs;
  pre["backbone_epochs"] = cfg.pretrain.backbone_epochs;
  pre["batch_size"] = cfg.pretrain.batch_size;
  pre["lr"] = cfg.pretrain.lr;
  pre["backbone_lr"] = cfg.pretrain.backbone_lr;
  pre["weight_decay"] = cfg.pretrain.weight_decay;
  pre["grad_clip"] = cfg.pretrain.grad_clip;
  pre["patch_len"] = {cfg.pretrain.patch_len_lo, cfg.pretrain.patch_len_hi};
  pre["heldout_fraction"] = cfg.pretrain.heldout_fraction;
  pre["global_match"] = cfg.pretrain.global_match;
  j["pretrain"] = pre;

  json fin;
  fin["epochs"] = cfg.finetune.epochs;
  fin["batch_size"] = cfg.finetune.batch_size;
  fin["lr"] = cfg.finetune.lr;
  fin["backbone_lr"] = cfg.finetune.backbone_lr;
  fin["weight_decay"] = cfg.finetune.weight_decay;
  fin["grad_clip"] = cfg.finetune.grad_clip;
  fin["k_multiplicity"] = cfg.finetune.k_multiplicity;
  fin["heldout_fraction"] = cfg.finetune.heldout_fraction;
  fin["loss"] = {{"lambda_loc", cfg.finetune.loss.lambda_loc},
                 {"lambda_c", cfg.finetune.loss.lambda_c},
                 {"lambda_iou", cfg.finetune.loss.lambda_iou},
                 {"lambda_l1", cfg.finetune.loss.lambda_l1},
                 {"lambda_rec", cfg.finetune.loss.lambda_rec},
                 {"lambda_at", cfg.finetune.loss.lambda_at},
                 {"background_class_weight",
                  cfg.finetune.loss.background_class_weight}};
  j["finetune"] = fin;

  json ev;
  ev["collar_sec"] = cfg.eval.collar_sec;
  ev["segment_sec"] = cfg.eval.segment_sec;
  ev["tau_event"] = cfg.eval.tau_event;
  ev["tau_tag"] = cfg.eval.tau_tag;
  ev["iou_suppress"] = cfg.eval.iou_suppress;
  ev["tag_rescale"] = cfg.eval.tag_rescale;
  j["eval"] = ev;
  return j;
}

// Rejects any key that the defaults tree does not contain; descends into
// objects so typos deep in a section still fail loudly.
void check_unknown_keys(const json& given, const json& schema,
                        const std::string& path) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    if (!schema.contains(key))
      throw std::invalid_argument("unknown config key: " + path + key);
    if (value.is_object() && schema.at(key).is_object())
      check_unknown_keys(value, schema.at(key), path + key + ".");
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void maybe_pair(const json& j, const char* key, std::pair<double, double>& out) {
  if (j.contains(key)) {
    out.first = j.at(key).at(0).get<double>();
    out.second = j.at(key).at(1).get<double>();
  }
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  cfg.synth = SynthSpec::default_three_class();
  return cfg;
}

std::string RunConfig::to_json() const { return to_json_tree(*this).dump(2); }

RunConfig RunConfig::from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  RunConfig cfg = defaults();
  check_unknown_keys(j, to_json_tree(cfg), "");

  if (j.contains("version") && j.at("version").get<int>() != 1)
    throw std::invalid_argument("unsupported config version");
  maybe(j, "seed", cfg.seed);
  maybe(j, "out_dir", cfg.out_dir);
  maybe(j, "cache_dir", cfg.cache_dir);

  if (j.contains("data")) {
    const json& d = j.at("data");
    maybe(d, "sample_rate_hz", cfg.synth.sample_rate_hz);
    maybe(d, "clip_duration_sec", cfg.synth.clip_duration_sec);
    maybe(d, "min_same_class_gap_sec", cfg.synth.min_same_class_gap_sec);
    if (d.contains("events_per_clip")) {
      cfg.synth.events_per_clip = {d.at("events_per_clip").at(0).get<int>(),
                                   d.at("events_per_clip").at(1).get<int>()};
    }
    maybe_pair(d, "snr_db", cfg.synth.snr_db_range);
    if (d.contains("classes")) {
      cfg.synth.classes.clear();
      for (const auto& jc : d.at("classes")) {
        ClassDef c;
        c.label = jc.at("label").get<std::string>();
        c.carrier = carrier_from_string(jc.at("carrier").get<std::string>());
        c.freq_range_hz = {jc.at("freq_hz").at(0).get<double>(),
                           jc.at("freq_hz").at(1).get<double>()};
        c.duration_range_sec = {jc.at("duration_sec").at(0).get<double>(),
                                jc.at("duration_sec").at(1).get<double>()};
        cfg.synth.classes.push_back(c);
      }
    }
    maybe(d, "n_mels", cfg.mel.n_mels);
    maybe(d, "hop_sec", cfg.mel.hop_sec);
    maybe(d, "win_sec", cfg.mel.win_sec);
    maybe(d, "log_floor", cfg.mel.log_floor);
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    maybe(m, "d_model", cfg.model.d_model);
    maybe(m, "n_encoder_blocks", cfg.model.n_encoder_blocks);
    maybe(m, "n_decoder_blocks", cfg.model.n_decoder_blocks);
    maybe(m, "n_heads", cfg.model.n_heads);
    maybe(m, "n_queries", cfg.model.n_queries);
    maybe(m, "n_patches", cfg.model.n_patches);
    maybe(m, "ffn_hidden", cfg.model.ffn_hidden);
    maybe(m, "gn_groups", cfg.model.gn_groups);
    maybe(m, "backbone_channels", cfg.model.backbone_channels);
    if (m.contains("backbone_strides")) {
      cfg.model.backbone_strides.clear();
      for (const auto& js : m.at("backbone_strides")) {
        cfg.model.backbone_strides.emplace_back(js.at(0).get<int>(),
                                                js.at(1).get<int>());
      }
    }
  }

  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    maybe(p, "epochs", cfg.pretrain.epochs);
    maybe(p, "backbone_epochs", cfg.pretrain.backbone_epochs);
    maybe(p, "batch_size", cfg.pretrain.batch_size);
    maybe(p, "lr", cfg.pretrain.lr);
    maybe(p, "backbone_lr", cfg.pretrain.backbone_lr);
    maybe(p, "weight_decay", cfg.pretrain.weight_decay);
    maybe(p, "grad_clip", cfg.pretrain.grad_clip);
    if (p.contains("patch_len")) {
      cfg.pretrain.patch_len_lo = p.at("patch_len").at(0).get<double>();
      cfg.pretrain.patch_len_hi = p.at("patch_len").at(1).get<double>();
    }
    maybe(p, "heldout_fraction", cfg.pretrain.heldout_fraction);
    maybe(p, "global_match", cfg.pretrain.global_match);
  }

  if (j.contains("finetune")) {
    const json& f = j.at("finetune");
    maybe(f, "epochs", cfg.finetune.epochs);
    maybe(f, "batch_size", cfg.finetune.batch_size);
    maybe(f, "lr", cfg.finetune.lr);
    maybe(f, "backbone_lr", cfg.finetune.backbone_lr);
    maybe(f, "weight_decay", cfg.finetune.weight_decay);
    maybe(f, "grad_clip", cfg.finetune.grad_clip);
    maybe(f, "k_multiplicity", cfg.finetune.k_multiplicity);
    maybe(f, "heldout_fraction", cfg.finetune.heldout_fraction);
    if (f.contains("loss")) {
      const json& l = f.at("loss");
      maybe(l, "lambda_loc", cfg.finetune.loss.lambda_loc);
      maybe(l, "lambda_c", cfg.finetune.loss.lambda_c);
      maybe(l, "lambda_iou", cfg.finetune.loss.lambda_iou);
      maybe(l, "lambda_l1", cfg.finetune.loss.lambda_l1);
      maybe(l, "lambda_rec", cfg.finetune.loss.lambda_rec);
      maybe(l, "lambda_at", cfg.finetune.loss.lambda_at);
      maybe(l, "background_class_weight",
            cfg.finetune.loss.background_class_weight);
    }
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    maybe(e, "collar_sec", cfg.eval.collar_sec);
    maybe(e, "segment_sec", cfg.eval.segment_sec);
    maybe(e, "tau_event", cfg.eval.tau_event);
    maybe(e, "tau_tag", cfg.eval.tau_tag);
    maybe(e, "iou_suppress", cfg.eval.iou_suppress);
    maybe(e, "tag_rescale", cfg.eval.tag_rescale);
  }

  cfg.synth.validate();
  cfg.model.n_classes = static_cast<int>(cfg.synth.classes.size());
  cfg.model.validate(Mode::kFinetune);
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json(text);
}

std::string RunConfig::model_hash() const {
  const json tree = to_json_tree(*this);
  json relevant;
  relevant["model"] = tree["model"];
  relevant["data"] = tree["data"];
  return config_hash(relevant.dump());
}

int RunConfig::class_index(const std::string& label) const {
  for (size_t i = 0; i < synth.classes.size(); ++i) {
    if (synth.classes[i].label == label) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown class label: " + label);
}

SpectrogramTensor featurize(const RunConfig& cfg, const ClipRecord& rec) {
  namespace fs = std::filesystem;
  fs::path cache_file;
  if (!cfg.cache_dir.empty()) {
    cache_file = fs::path(cfg.cache_dir) / (rec.clip_id + ".f32");
    const fs::path sidecar = fs::path(cfg.cache_dir) / (rec.clip_id + ".json");
    if (fs::exists(cache_file) && fs::exists(sidecar)) {
      std::ifstream sc(sidecar);
      const json meta = json::parse(sc);
      SpectrogramTensor spec;
      spec.frames_per_sec = meta.at("frames_per_sec").get<double>();
      const auto rows = meta.at("shape").at(0).get<Eigen::Index>();
      const auto cols = meta.at("shape").at(1).get<Eigen::Index>();
      Eigen::MatrixXf raw(rows, cols);
      std::ifstream data(cache_file, std::ios::binary);
      data.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(raw.size())));
      if (data) {
        spec.values = raw.cast<double>();
        return spec;
      }
    }
  }

  auto [regen, wave] = synth_clip(cfg.synth, rec.synth_seed, rec.clip_id);
  SpectrogramTensor spec = mel_spectrogram(wave, cfg.synth.sample_rate_hz, cfg.mel);

  if (!cfg.cache_dir.empty()) {
    fs::create_directories(cfg.cache_dir);
    const Eigen::MatrixXf raw = spec.values.cast<float>();
    std::ofstream data(cache_file, std::ios::binary);
    data.write(reinterpret_cast<const char*>(raw.data()),
               static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(raw.size())));
    std::ofstream sc(fs::path(cfg.cache_dir) / (rec.clip_id + ".json"));
    sc << json({{"shape", {raw.rows(), raw.cols()}},
                {"frames_per_sec", spec.frames_per_sec}})
              .dump();
  }
  return spec;
}

}  // namespace sedt
