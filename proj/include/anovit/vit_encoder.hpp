#pragma once

// Patch embedding and pre-norm transformer encoder. The encoder returns all
// N + 1 tokens ([cls] first, then patches in row-major patch order); there is
// no classification head.

#include <optional>
#include <string>
#include <vector>

#include "anovit/autograd.hpp"
#include "anovit/init.hpp"

namespace anovit {

struct EncoderConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 1;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t depth = 4;
  std::size_t mlp_ratio = 4;
  double ln_eps = 1e-6;

  std::size_t head_dim() const { return heads ? embed_dim / heads : 0; }
  std::size_t num_patches() const;
  std::size_t grid_side() const;  // sqrt(N)
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  // Every violated invariant, empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;  // throws ConfigError listing all violations

  static EncoderConfig desk();
  // 384x384x3, P=16, D=768, 8 heads, 12 blocks.
  static EncoderConfig full();
};

// [H,W,C] -> [N, P*P*C] or [B,H,W,C] -> [B, N, P*P*C]. Patches are row-major
// over the patch grid; within a patch, pixels are row-major then channel.
template <typename T>
NdArray<T> extract_patches(const NdArray<T>& images, std::size_t patch_size);

template <typename T>
struct AttentionResult {
  Var<T> output;        // [.., N+1, Dh]
  NdArray<T> weights;   // [.., N+1, N+1], rows sum to 1
};

// softmax(q k^T / sqrt(Dh)) v for q, k, v of shape [.., N+1, Dh].
template <typename T>
AttentionResult<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v);

// One head: [q, k, v] = tokens U_qkv, U_qkv: [D, 3 Dh].
template <typename T>
AttentionResult<T> self_attention(const Var<T>& tokens, const Var<T>& u_qkv,
                                  const std::optional<Var<T>>& b_qkv = std::nullopt);

// k heads sharing one fused projection U_qkv: [D, 3 k Dh] laid out as
// [q_1..q_k | k_1..k_k | v_1..v_k]; head outputs are concatenated and
// projected by U_msa: [k Dh, D].
template <typename T>
Var<T> multi_head_attention(const Var<T>& tokens, std::size_t heads, const Var<T>& u_qkv,
                            const std::optional<Var<T>>& b_qkv, const Var<T>& u_msa,
                            const std::optional<Var<T>>& b_msa, std::vector<NdArray<T>>* weights = nullptr);

template <typename T>
struct TransformerBlockParams {
  Parameter<T>* ln1_gamma;
  Parameter<T>* ln1_beta;
  Parameter<T>* qkv_weight;
  Parameter<T>* qkv_bias;
  Parameter<T>* proj_weight;
  Parameter<T>* proj_bias;
  Parameter<T>* ln2_gamma;
  Parameter<T>* ln2_beta;
  Parameter<T>* fc1_weight;
  Parameter<T>* fc1_bias;
  Parameter<T>* fc2_weight;
  Parameter<T>* fc2_bias;
};

template <typename T>
TransformerBlockParams<T> register_transformer_block(ParameterStore<T>& store, const std::string& prefix,
                                                     std::size_t dim, std::size_t mlp_ratio, Rng& rng);

// Pre-norm residual block: x + MSA(LN(x)), then x + MLP(LN(x)) with
// MLP = fc2(gelu(fc1(.))).
template <typename T>
Var<T> transformer_block(const Var<T>& tokens, const TransformerBlockParams<T>& params, std::size_t heads,
                         double ln_eps, std::vector<NdArray<T>>* attention = nullptr);

template <typename T>
class VitEncoder {
 public:
  VitEncoder(const EncoderConfig& config, ParameterStore<T>& store, Rng& rng,
             const std::string& prefix = "encoder");

  const EncoderConfig& config() const noexcept { return config_; }

  // [B, N, P*P*C] -> [B, N+1, D]: concat(x_cls, patches W + b) + E_pos.
  Var<T> embed(const Var<T>& patches) const;

  // [B,H,W,C] (or [H,W,C]) -> E' of shape [B, N+1, D] (or [N+1, D]).
  // When `attention` is given it receives one [B, N+1, N+1] array per head
  // per block, block-major.
  Var<T> encode(const NdArray<T>& images, std::vector<NdArray<T>>* attention = nullptr) const;

  Parameter<T>& cls_token() const { return *cls_token_; }
  Parameter<T>& pos_embedding() const { return *pos_embed_; }
  Parameter<T>& patch_weight() const { return *patch_weight_; }
  const TransformerBlockParams<T>& block_params(std::size_t i) const { return blocks_.at(i); }

 private:
  EncoderConfig config_;
  Parameter<T>* patch_weight_;
  Parameter<T>* patch_bias_;
  Parameter<T>* cls_token_;
  Parameter<T>* pos_embed_;
  std::vector<TransformerBlockParams<T>> blocks_;
  Parameter<T>* norm_gamma_;
  Parameter<T>* norm_beta_;
};

extern template class VitEncoder<float>;
extern template class VitEncoder<double>;

}  // namespace anovit
