#pragma once

#include "sedt/conv.hpp"
#include "sedt/tape.hpp"

#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sedt {

enum class Mode { kFinetune, kPretrain };

struct ModelConfig {
  int d_model = 128;
  int n_encoder_blocks = 3;
  int n_decoder_blocks = 3;
  int n_heads = 4;
  int n_queries = 10;   // N
  int n_patches = 2;    // M, pretraining only
  int n_classes = 3;
  std::vector<int> backbone_channels = {32, 64, 128, 128};
  std::vector<std::pair<int, int>> backbone_strides = {{2, 2}, {2, 2}, {2, 2}, {1, 1}};
  int ffn_hidden = 512;
  int gn_groups = 8;

  void validate(Mode mode) const {
    if (d_model % n_heads != 0)
      throw std::invalid_argument("d_model must be divisible by n_heads");
    if (mode == Mode::kPretrain && n_queries % n_patches != 0)
      throw std::invalid_argument("n_queries must be divisible by n_patches");
    if (backbone_channels.size() != backbone_strides.size())
      throw std::invalid_argument("backbone channels/strides size mismatch");
    if (backbone_channels.empty())
      throw std::invalid_argument("backbone needs at least one block");
  }

  int backbone_out_channels() const { return backbone_channels.back(); }
  int time_downsample() const {
    int s = 1;
    for (auto& [st, sf] : backbone_strides) s *= st;
    return s;
  }
};

/// One-dimensional sinusoidal positional encoding, flattened to token order
/// p = t * f_bins + f (rows). Depends on the time index only.
template <class Scalar>
ad::Mat<Scalar> positional_encoding(int t_frames, int f_bins, int d) {
  ad::Mat<Scalar> pe(static_cast<Eigen::Index>(t_frames) * f_bins, d);
  for (int ti = 0; ti < t_frames; ++ti) {
    for (int k = 0; k < d; ++k) {
      const double angle =
          ti / std::pow(10000.0, 2.0 * (k / 2) / static_cast<double>(d));
      const double v = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
      for (int fi = 0; fi < f_bins; ++fi) {
        pe(static_cast<Eigen::Index>(ti) * f_bins + fi, k) = static_cast<Scalar>(v);
      }
    }
  }
  return pe;
}

/// Named dense parameters in registration order. The name prefix up to the
/// first '.' is the parameter group used by freezing and weight transfer.
template <class Scalar>
struct ParamStore {
  using Mat = ad::Mat<Scalar>;
  std::vector<std::string> order;
  std::map<std::string, Mat> tensors;

  Mat& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    order.push_back(name);
    return tensors[name] = Mat::Zero(rows, cols);
  }
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  Mat& at(const std::string& name) { return tensors.at(name); }
  const Mat& at(const std::string& name) const { return tensors.at(name); }

  static std::string group_of(const std::string& name) {
    return name.substr(0, name.find('.'));
  }
};

/// Node ids of every parameter bound onto a tape for one forward pass.
using ParamNodes = std::map<std::string, int>;

template <class Scalar>
struct FeatureMapNode {
  int node = -1;  // C x (T*F), channels as rows
  int t_frames = 0;
  int f_bins = 0;
};

/// The SEDT network. One parameter store serves both modes; pretrain-only
/// tensors (patch projection, reconstruction head, binary class head) and
/// finetune-only tensors (audio query, tagging head, event class head)
/// coexist and the forward pass picks the ones its mode needs.
template <class Scalar>
class SEDTModel {
 public:
  using Mat = ad::Mat<Scalar>;
  using TapeT = ad::Tape<Scalar>;

  ModelConfig config;
  ParamStore<Scalar> params;

  explicit SEDTModel(ModelConfig cfg) : config(std::move(cfg)) { register_params(); }

  /// Fills every tensor from the declared scheme: Xavier-uniform weights,
  /// zero biases, unit norm gains, unit-variance query embeddings.
  void init(unsigned long long seed) {
    std::mt19937_64 rng(seed ^ 0x5edc0ffeeULL);
    for (const auto& name : params.order) init_tensor(name, rng);
  }

  void init_tensor(const std::string& name, std::mt19937_64& rng) {
    Mat& m = params.at(name);
    const bool is_gain = name.ends_with(".gamma");
    const bool is_bias = name.ends_with(".beta") || name.ends_with(".b") ||
                         name.ends_with(".bias");
    const bool is_embed = name.ends_with(".embed");
    if (is_gain) {
      m.setOnes();
    } else if (is_bias) {
      m.setZero();
    } else if (is_embed) {
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<Scalar>(gauss(rng));
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      std::uniform_real_distribution<double> uni(-limit, limit);
      for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<Scalar>(uni(rng));
    }
  }

  ParamNodes bind(TapeT& t) const {
    ParamNodes nodes;
    for (const auto& name : params.order) {
      nodes[name] = t.push(params.at(name));
    }
    return nodes;
  }

  // ---- backbone -----------------------------------------------------------

  FeatureMapNode<Scalar> backbone_forward(TapeT& t, const ParamNodes& p,
                                          const Mat& spectrogram) const {
    const int t_in = static_cast<int>(spectrogram.rows());
    const int f_in = static_cast<int>(spectrogram.cols());
    if (t_in < config.time_downsample())
      throw std::invalid_argument("input shorter than the backbone receptive field");

    // Channels-as-rows layout: start with one channel of T*F positions.
    Mat x0(1, static_cast<Eigen::Index>(t_in) * f_in);
    for (int ti = 0; ti < t_in; ++ti)
      for (int fi = 0; fi < f_in; ++fi)
        x0(0, static_cast<Eigen::Index>(ti) * f_in + fi) = spectrogram(ti, fi);

    int x = t.push(std::move(x0));
    int h = t_in, w = f_in;
    for (size_t i = 0; i < config.backbone_channels.size(); ++i) {
      const auto tag = std::to_string(i);
      const auto [sh, sw] = config.backbone_strides[i];
      x = ad::conv3x3(t, x, p.at("backbone.conv" + tag + ".w"),
                      p.at("backbone.conv" + tag + ".b"), h, w, sh, sw);
      h = (h + sh - 1) / sh;
      w = (w + sw - 1) / sw;
      const int groups = std::min(config.gn_groups, config.backbone_channels[i]);
      x = ad::group_norm(t, x, p.at("backbone.gn" + tag + ".gamma"),
                         p.at("backbone.gn" + tag + ".beta"), groups);
      x = ad::relu(t, x);
    }
    return {x, h, w};
  }

  /// GAP over the feature map grid: C x (T*F) -> C x 1.
  int gap(TapeT& t, const FeatureMapNode<Scalar>& fm) const {
    return ad::rowwise_mean(t, fm.node);
  }

  /// Patch feature on a frozen backbone: value-only, no tape kept.
  Mat gap_patch_feature(const Mat& patch) const {
    TapeT scratch;
    const ParamNodes p = bind(scratch);
    const auto fm = backbone_forward(scratch, p, patch);
    return scratch.value(fm.node).rowwise().mean();
  }

  // ---- transformer --------------------------------------------------------

  /// Projects the backbone map to d_model, adds positional encoding, flattens
  /// to token rows (T*F) x d, and runs the E-block self-attention stack.
  /// With E = 0 the memory is exactly the flattened P + z_0.
  int encode(TapeT& t, const ParamNodes& p, const FeatureMapNode<Scalar>& fm,
             const Mat& pos) const {
    // tokens = (input_proj * fmap)^T + pos
    const int proj = ad::matmul(t, p.at("encoder.input_proj.w"), fm.node);
    const int proj_b = ad::add_colvec(t, proj, p.at("encoder.input_proj.b"));
    const int tokens = transpose_node(t, proj_b);
    const int pos_node = t.push(pos);
    int x = ad::add(t, tokens, pos_node);
    for (int i = 0; i < config.n_encoder_blocks; ++i) {
      const std::string b = "encoder.block" + std::to_string(i) + ".";
      const int n1 = ad::layer_norm_rows(t, x, p.at(b + "ln1.gamma"), p.at(b + "ln1.beta"));
      const int att = mha(t, p, b + "attn.", n1, n1, n1);
      x = ad::add(t, x, att);
      const int n2 = ad::layer_norm_rows(t, x, p.at(b + "ln2.gamma"), p.at(b + "ln2.beta"));
      const int ff = ffn(t, p, b, n2);
      x = ad::add(t, x, ff);
    }
    return x;
  }

  /// Decoder query construction. Finetune: [audio_query, q_1..q_N].
  /// Pretrain: no audio query; projected patch feature g is added to each
  /// query of group g (N/M queries per patch).
  int build_decoder_queries(TapeT& t, const ParamNodes& p, Mode mode,
                            int patch_features_node = -1) const {
    const int queries = p.at("event_queries.embed");
    if (mode == Mode::kFinetune) {
      if (patch_features_node >= 0)
        throw std::invalid_argument("patch features are a pretrain-only input");
      return ad::concat_rows(t, {p.at("audio_query.embed"), queries});
    }
    config.validate(Mode::kPretrain);
    if (patch_features_node < 0) return queries;
    const auto m_patches = static_cast<int>(t.value(patch_features_node).rows());
    if (config.n_queries % m_patches != 0)
      throw std::invalid_argument("n_queries must be divisible by the patch count");
    // Project to d_model, then repeat each patch row over its query group.
    int proj = ad::matmul(t, patch_features_node, p.at("patch_proj.w"));
    proj = ad::add_rowvec(t, proj, p.at("patch_proj.b"));
    std::vector<int> expand_idx;
    const int group = config.n_queries / m_patches;
    for (int q = 0; q < config.n_queries; ++q) expand_idx.push_back(q / group);
    const int expanded = ad::gather_rows(t, proj, expand_idx);
    return ad::add(t, queries, expanded);
  }

  int decode(TapeT& t, const ParamNodes& p, int memory, int queries,
             const Mat& pos) const {
    const int pos_node = t.push(pos);
    const int mem_keys = ad::add(t, memory, pos_node);
    int x = queries;
    for (int i = 0; i < config.n_decoder_blocks; ++i) {
      const std::string b = "decoder.block" + std::to_string(i) + ".";
      const int n1 = ad::layer_norm_rows(t, x, p.at(b + "ln1.gamma"), p.at(b + "ln1.beta"));
      const int self_att = mha(t, p, b + "self.", n1, n1, n1);
      x = ad::add(t, x, self_att);
      const int n2 = ad::layer_norm_rows(t, x, p.at(b + "ln2.gamma"), p.at(b + "ln2.beta"));
      const int cross_att = mha(t, p, b + "cross.", n2, mem_keys, memory);
      x = ad::add(t, x, cross_att);
      const int n3 = ad::layer_norm_rows(t, x, p.at(b + "ln3.gamma"), p.at(b + "ln3.beta"));
      const int ff = ffn(t, p, b, n3);
      x = ad::add(t, x, ff);
    }
    return ad::layer_norm_rows(t, x, p.at("decoder.ln_out.gamma"),
                               p.at("decoder.ln_out.beta"));
  }

  // ---- heads --------------------------------------------------------------

  struct Predictions {
    int class_logits = -1;  // N x K
    int class_probs = -1;   // N x K, rows sum to 1
    int boundaries = -1;    // N x 2, (m, l) in (0,1)
    int tag_logits = -1;    // 1 x n_classes (finetune only)
    int tag_probs = -1;
    int recon = -1;         // N x backbone_channels (pretrain only)
  };

  Predictions heads(TapeT& t, const ParamNodes& p, int embeddings,
                    Mode mode) const {
    Predictions out;
    int event_emb = embeddings;
    if (mode == Mode::kFinetune) {
      const int audio_emb = ad::slice_rows(t, embeddings, 0, 1);
      event_emb = ad::slice_rows(t, embeddings, 1, config.n_queries);
      int tl = ad::matmul(t, audio_emb, p.at("tagging_head.w"));
      out.tag_logits = ad::add_rowvec(t, tl, p.at("tagging_head.b"));
      out.tag_probs = ad::sigmoid(t, out.tag_logits);
    }

    const std::string cls = mode == Mode::kFinetune ? "class_head." : "patch_class_head.";
    int cl = ad::matmul(t, event_emb, p.at(cls + "w"));
    out.class_logits = ad::add_rowvec(t, cl, p.at(cls + "b"));
    out.class_probs = ad::softmax_rows(t, out.class_logits);

    int h1 = ad::add_rowvec(t, ad::matmul(t, event_emb, p.at("boundary_head.w1")),
                            p.at("boundary_head.b1"));
    h1 = ad::relu(t, h1);
    int h2 = ad::add_rowvec(t, ad::matmul(t, h1, p.at("boundary_head.w2")),
                            p.at("boundary_head.b2"));
    h2 = ad::relu(t, h2);
    const int bl = ad::add_rowvec(t, ad::matmul(t, h2, p.at("boundary_head.w3")),
                                  p.at("boundary_head.b3"));
    out.boundaries = ad::sigmoid(t, bl);

    if (mode == Mode::kPretrain) {
      int rc = ad::matmul(t, event_emb, p.at("recon_head.w"));
      out.recon = ad::add_rowvec(t, rc, p.at("recon_head.b"));
    }
    return out;
  }

  /// Full forward pass. In pretrain mode patch_features (M x C_backbone,
  /// from the frozen backbone) may be supplied; finetune takes none.
  /// With freeze_backbone the feature map enters the tape as a constant, so
  /// no gradient reaches (or is spent on) the backbone.
  Predictions forward(TapeT& t, const ParamNodes& p, const Mat& spectrogram,
                      Mode mode, const Mat* patch_features = nullptr,
                      bool freeze_backbone = false) const {
    FeatureMapNode<Scalar> fm;
    if (freeze_backbone) {
      TapeT scratch;
      const ParamNodes ps = bind(scratch);
      const auto f = backbone_forward(scratch, ps, spectrogram);
      fm.node = t.push(scratch.value(f.node));
      fm.t_frames = f.t_frames;
      fm.f_bins = f.f_bins;
    } else {
      fm = backbone_forward(t, p, spectrogram);
    }
    const Mat pos = positional_encoding<Scalar>(fm.t_frames, fm.f_bins, config.d_model);
    const int memory = encode(t, p, fm, pos);
    int patch_node = -1;
    if (patch_features != nullptr) patch_node = t.push(*patch_features);
    const int queries = build_decoder_queries(t, p, mode, patch_node);
    const int emb = decode(t, p, memory, queries, pos);
    return heads(t, p, emb, mode);
  }

  // ---- building blocks ----------------------------------------------------

  int mha(TapeT& t, const ParamNodes& p, const std::string& prefix, int q_in,
          int k_in, int v_in) const {
    const int d = config.d_model;
    const int dh = d / config.n_heads;
    const int q = ad::add_rowvec(t, ad::matmul(t, q_in, p.at(prefix + "wq")), p.at(prefix + "bq"));
    const int k = ad::add_rowvec(t, ad::matmul(t, k_in, p.at(prefix + "wk")), p.at(prefix + "bk"));
    const int v = ad::add_rowvec(t, ad::matmul(t, v_in, p.at(prefix + "wv")), p.at(prefix + "bv"));
    std::vector<int> head_outs;
    for (int h = 0; h < config.n_heads; ++h) {
      const int qh = ad::slice_cols(t, q, h * dh, dh);
      const int kh = ad::slice_cols(t, k, h * dh, dh);
      const int vh = ad::slice_cols(t, v, h * dh, dh);
      int scores = ad::matmul_bt(t, qh, kh);
      scores = ad::scale(t, scores, static_cast<Scalar>(1.0 / std::sqrt(double(dh))));
      const int attn = ad::softmax_rows(t, scores);
      head_outs.push_back(ad::matmul(t, attn, vh));
    }
    const int cat = ad::concat_cols(t, head_outs);
    return ad::add_rowvec(t, ad::matmul(t, cat, p.at(prefix + "wo")), p.at(prefix + "bo"));
  }

  int ffn(TapeT& t, const ParamNodes& p, const std::string& prefix, int x) const {
    int h = ad::add_rowvec(t, ad::matmul(t, x, p.at(prefix + "ffn.w1")), p.at(prefix + "ffn.b1"));
    h = ad::relu(t, h);
    return ad::add_rowvec(t, ad::matmul(t, h, p.at(prefix + "ffn.w2")), p.at(prefix + "ffn.b2"));
  }

  static int transpose_node(TapeT& t, int a) {
    const int out = t.push(t.value(a).transpose());
    t.set_backward(out, [a, out](TapeT& t) {
      t.grad(a) += t.grad(out).transpose();
    });
    return out;
  }

 private:
  void register_params() {
    const int d = config.d_model;
    int cin = 1;
    for (size_t i = 0; i < config.backbone_channels.size(); ++i) {
      const int cout = config.backbone_channels[i];
      const auto tag = std::to_string(i);
      params.add("backbone.conv" + tag + ".w", cout, cin * 9);
      params.add("backbone.conv" + tag + ".b", cout, 1);
      params.add("backbone.gn" + tag + ".gamma", cout, 1);
      params.add("backbone.gn" + tag + ".beta", cout, 1);
      cin = cout;
    }
    params.add("encoder.input_proj.w", d, config.backbone_out_channels());
    params.add("encoder.input_proj.b", d, 1);
    for (int i = 0; i < config.n_encoder_blocks; ++i) {
      const std::string b = "encoder.block" + std::to_string(i) + ".";
      add_ln(b + "ln1");
      add_attn(b + "attn.");
      add_ln(b + "ln2");
      add_ffn(b);
    }
    for (int i = 0; i < config.n_decoder_blocks; ++i) {
      const std::string b = "decoder.block" + std::to_string(i) + ".";
      add_ln(b + "ln1");
      add_attn(b + "self.");
      add_ln(b + "ln2");
      add_attn(b + "cross.");
      add_ln(b + "ln3");
      add_ffn(b);
    }
    add_ln("decoder.ln_out");
    params.add("event_queries.embed", config.n_queries, d);
    params.add("audio_query.embed", 1, d);
    params.add("class_head.w", d, config.n_classes + 1);
    params.add("class_head.b", 1, config.n_classes + 1);
    params.add("patch_class_head.w", d, 2);
    params.add("patch_class_head.b", 1, 2);
    params.add("boundary_head.w1", d, d);
    params.add("boundary_head.b1", 1, d);
    params.add("boundary_head.w2", d, d);
    params.add("boundary_head.b2", 1, d);
    params.add("boundary_head.w3", d, 2);
    params.add("boundary_head.b3", 1, 2);
    params.add("tagging_head.w", d, config.n_classes);
    params.add("tagging_head.b", 1, config.n_classes);
    params.add("recon_head.w", d, config.backbone_out_channels());
    params.add("recon_head.b", 1, config.backbone_out_channels());
    params.add("patch_proj.w", config.backbone_out_channels(), d);
    params.add("patch_proj.b", 1, d);
    // Linear probe for backbone audio-tagging pretraining.
    params.add("bb_tag_head.w", config.backbone_out_channels(), config.n_classes);
    params.add("bb_tag_head.b", 1, config.n_classes);
  }

  void add_ln(const std::string& name) {
    params.add(name + ".gamma", 1, config.d_model);
    params.add(name + ".beta", 1, config.d_model);
  }
  void add_attn(const std::string& prefix) {
    const int d = config.d_model;
    for (const char* w : {"wq", "wk", "wv", "wo"}) params.add(prefix + w, d, d);
    for (const char* b : {"bq", "bk", "bv", "bo"}) params.add(prefix + b, 1, d);
  }
  void add_ffn(const std::string& prefix) {
    params.add(prefix + "ffn.w1", config.d_model, config.ffn_hidden);
    params.add(prefix + "ffn.b1", 1, config.ffn_hidden);
    params.add(prefix + "ffn.w2", config.ffn_hidden, config.d_model);
    params.add(prefix + "ffn.b2", 1, config.d_model);
  }
};

}  // namespace sedt
