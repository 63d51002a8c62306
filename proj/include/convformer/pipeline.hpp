#pragma once

#include <optional>
#include <string>
#include <vector>

#include "convformer/conv_former.hpp"
#include "convformer/tensor.hpp"

namespace convformer {

inline constexpr int kIgnoreLabel = 255;
inline constexpr int kOutputStride = 8;

/// Per-class embedding matrix [K, C_text] with class names. Frozen: the
/// matrix never requires grad and training never touches it.
struct TextEmbeddings {
  std::vector<std::string> class_names;
  Tensor matrix;

  std::int64_t classes() const { return matrix.dim(0); }
  std::int64_t width() const { return matrix.dim(1); }
};

/// Deterministic per-name embedding derived from the prompt
/// "a photo of a {name}.": the SplitMix64 stream seeded with
/// seed ^ fnv1a64(prompt) yields C_text uniforms in [-1, 1), and the row
/// is L2-normalized. Identical names + seed reproduce bit-identical rows
/// on every platform.
TextEmbeddings stub_text_encoder(const std::vector<std::string>& class_names, int c_text,
                                 std::uint64_t seed);

TextEmbeddings load_text_embeddings(const std::string& path);
void save_text_embeddings(const std::string& path, const TextEmbeddings& emb);

struct PipelineConfig {
  ConvFormerConfig fusion;   // fusion.depth interpreted through fusion_depth below
  int fusion_depth = 6;      // 0 = no-fusion baseline (identity module)
  int vis_channels = 32;     // backbone output width
  int text_channels = 32;    // C_text expected from the embeddings
  int decoder_channels = 16;  // width of the decoder head
  double temperature = 1.0;   // score-map tau

  void validate() const;
};

struct Param {
  std::string name;
  Tensor tensor;
  bool backbone = false;
};

/// Backbone stub + channel alignment + Conv-Former fusion + pixel-text
/// score map + concat + small decoder head. Construction is fully
/// deterministic given (config, embeddings, seed).
class SegmentationPipeline {
 public:
  SegmentationPipeline(const PipelineConfig& cfg, const TextEmbeddings& text, std::uint64_t seed,
                       Dtype dt = Dtype::F32);

  struct Outputs {
    Tensor logits;         // [H, W, K]
    Tensor score_map;      // [h, w, K]
    Tensor fused_feature;  // [h, w, C]
    Tensor fused_text;     // [K, C]
  };

  /// image: [H, W, 3]; H, W are padded up to multiples of 8 internally
  /// and the logits cropped back.
  Outputs forward(const Tensor& image) const;

  /// labels: [H, W] of class indices or kIgnoreLabel. Returns
  /// cross_entropy(logits) + aux_weight * cross_entropy(score map against
  /// nearest-downsampled labels).
  Tensor loss(const Outputs& out, const Tensor& labels, double aux_weight) const;

  /// Decoder head alone: [h, w, C+K] -> [8h, 8w, K] logits.
  Tensor decode(const Tensor& fused_concat) const;

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  void zero_grads();
  std::int64_t trainable_count() const;

  void save_checkpoint_file(const std::string& path) const;
  void load_checkpoint_file(const std::string& path);

  const PipelineConfig& config() const { return cfg_; }
  const TextEmbeddings& text() const { return text_; }
  const Tensor& text_matrix() const { return text_matrix_; }
  Dtype dtype() const { return dtype_; }
  const FusionStack* fusion() const { return fusion_ ? &*fusion_ : nullptr; }

  /// Pre-decode pass for equivariance studies: returns (I', T', S).
  struct FusionProbe {
    Tensor fused_feature;
    Tensor fused_text;
    Tensor score_map;
  };
  FusionProbe probe(const Tensor& image) const;

 private:
  struct BottleneckStage {
    Tensor expand_weight, expand_bias;
    Tensor dw_weight, dw_bias;
    Tensor project_weight, project_bias;
  };

  Tensor backbone_forward(const Tensor& image) const;

  PipelineConfig cfg_;
  TextEmbeddings text_;
  Tensor text_matrix_;  // text_.matrix cast to the pipeline dtype, frozen
  Dtype dtype_;

  Tensor stem_weight_, stem_bias_;
  BottleneckStage stage1_, stage2_;
  Tensor align_image_weight_, align_image_bias_;
  Tensor align_text_weight_, align_text_bias_;
  std::optional<FusionStack> fusion_;
  Tensor dec1_weight_, dec1_bias_;
  Tensor dec2_weight_, dec2_bias_;
  Tensor cls_weight_, cls_bias_;

  std::vector<Param> params_;
};

/// Nearest-neighbor label downsample to the score-map grid (factor 8,
/// sample at each cell center).
Tensor downsample_labels(const Tensor& labels, int factor);

}  // namespace convformer
