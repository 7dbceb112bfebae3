#include "anovit/vit_encoder.hpp"

#include <cmath>

#include "anovit/ops.hpp"

namespace anovit {

namespace {

std::size_t exact_sqrt(std::size_t n) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  while (r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  return r;
}

}  // namespace

std::size_t EncoderConfig::num_patches() const {
  if (patch_size == 0) return 0;
  return (image_h / patch_size) * (image_w / patch_size);
}

std::size_t EncoderConfig::grid_side() const { return exact_sqrt(num_patches()); }

std::vector<std::string> EncoderConfig::violations() const {
  std::vector<std::string> out;
  if (image_h == 0 || image_w == 0 || channels == 0) out.emplace_back("image extents and channels must be positive");
  if (patch_size == 0) {
    out.emplace_back("patch_size must be positive");
  } else {
    if (image_h % patch_size) out.emplace_back("image_h " + std::to_string(image_h) + " not divisible by patch_size " + std::to_string(patch_size));
    if (image_w % patch_size) out.emplace_back("image_w " + std::to_string(image_w) + " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (image_h != image_w) out.emplace_back("image must be square so the patch grid is sqrt(N) x sqrt(N)");
  const std::size_t n = num_patches();
  if (n == 0 || grid_side() * grid_side() != n) out.emplace_back("patch count N=" + std::to_string(n) + " is not a perfect square");
  if (heads == 0) {
    out.emplace_back("heads must be positive");
  } else if (embed_dim == 0 || embed_dim % heads) {
    out.emplace_back("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (depth == 0) out.emplace_back("depth must be >= 1");
  if (mlp_ratio == 0) out.emplace_back("mlp_ratio must be >= 1");
  if (!(ln_eps > 0.0)) out.emplace_back("ln_eps must be positive");
  return out;
}

void EncoderConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid encoder config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::full() {
  EncoderConfig c;
  c.image_h = 384;
  c.image_w = 384;
  c.channels = 3;
  c.patch_size = 16;
  c.embed_dim = 768;
  c.heads = 8;
  c.depth = 12;
  c.mlp_ratio = 4;
  return c;
}

template <typename T>
NdArray<T> extract_patches(const NdArray<T>& images, std::size_t p) {
  const Shape& s = images.shape();
  if (s.size() != 3 && s.size() != 4) {
    throw DimensionError("extract_patches: expected [H,W,C] or [B,H,W,C], got " + shape_str(s));
  }
  const bool batched = s.size() == 4;
  const std::size_t b = batched ? s[0] : 1;
  const std::size_t h = s[s.size() - 3];
  const std::size_t w = s[s.size() - 2];
  const std::size_t c = s[s.size() - 1];
  if (p == 0 || h % p || w % p) {
    throw ConfigError("extract_patches: image " + shape_str(s) + " not divisible into " +
                      std::to_string(p) + "x" + std::to_string(p) + " patches");
  }
  const std::size_t gh = h / p;
  const std::size_t gw = w / p;
  const std::size_t n = gh * gw;
  const std::size_t len = p * p * c;
  NdArray<T> out(batched ? Shape{b, n, len} : Shape{n, len});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px) {
        T* dst = out.ptr() + (bi * n + py * gw + px) * len;
        for (std::size_t y = 0; y < p; ++y) {
          const T* src = images.ptr() + ((bi * h + py * p + y) * w + px * p) * c;
          std::copy(src, src + p * c, dst + y * p * c);
        }
      }
    }
  }
  return out;
}

template <typename T>
AttentionResult<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const std::size_t dh = q.shape().back();
  const std::size_t rank = q.shape().size();
  auto logits = ops::scale(ops::matmul(q, k, /*transpose_b=*/true), static_cast<T>(1.0 / std::sqrt(double(dh))));
  auto attn = ops::softmax(logits, rank - 1);
  AttentionResult<T> result;
  result.weights = attn.value();
  result.output = ops::matmul(attn, v);
  return result;
}

template <typename T>
AttentionResult<T> self_attention(const Var<T>& tokens, const Var<T>& u_qkv, const std::optional<Var<T>>& b_qkv) {
  const Shape& us = u_qkv.shape();
  if (us.size() != 2 || us[0] != tokens.shape().back() || us[1] % 3) {
    throw DimensionError("self_attention: U_qkv " + shape_str(us) + " incompatible with tokens " +
                         shape_str(tokens.shape()));
  }
  const std::size_t dh = us[1] / 3;
  const std::size_t last = tokens.shape().size() - 1;
  auto qkv = ops::linear(tokens, u_qkv, b_qkv);
  return scaled_dot_attention(ops::slice(qkv, last, 0, dh), ops::slice(qkv, last, dh, dh),
                              ops::slice(qkv, last, 2 * dh, dh));
}

template <typename T>
Var<T> multi_head_attention(const Var<T>& tokens, std::size_t heads, const Var<T>& u_qkv,
                            const std::optional<Var<T>>& b_qkv, const Var<T>& u_msa,
                            const std::optional<Var<T>>& b_msa, std::vector<NdArray<T>>* weights) {
  const Shape& us = u_qkv.shape();
  const Shape& ms = u_msa.shape();
  if (heads == 0 || us.size() != 2 || us[1] % (3 * heads) || ms.size() != 2 || ms[0] != us[1] / 3) {
    throw ConfigError("multi_head_attention: " + std::to_string(heads) + " heads with U_qkv " + shape_str(us) +
                      " and U_msa " + shape_str(ms));
  }
  const std::size_t width = us[1] / 3;  // k * Dh
  const std::size_t dh = width / heads;
  const std::size_t last = tokens.shape().size() - 1;
  auto qkv = ops::linear(tokens, u_qkv, b_qkv);
  std::vector<Var<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto r = scaled_dot_attention(ops::slice(qkv, last, h * dh, dh), ops::slice(qkv, last, width + h * dh, dh),
                                  ops::slice(qkv, last, 2 * width + h * dh, dh));
    if (weights) weights->push_back(std::move(r.weights));
    outputs.push_back(std::move(r.output));
  }
  auto merged = heads == 1 ? outputs.front() : ops::concat(outputs, last);
  return ops::linear(merged, u_msa, b_msa);
}

template <typename T>
TransformerBlockParams<T> register_transformer_block(ParameterStore<T>& store, const std::string& prefix,
                                                     std::size_t dim, std::size_t mlp_ratio, Rng& rng) {
  const std::size_t hidden = dim * mlp_ratio;
  TransformerBlockParams<T> p{};
  p.ln1_gamma = &store.add(prefix + ".ln1.gamma", NdArray<T>({dim}, T{1}));
  p.ln1_beta = &store.add(prefix + ".ln1.beta", NdArray<T>({dim}));
  p.qkv_weight = &store.add(prefix + ".attn.qkv.weight", normal_init<T>({dim, 3 * dim}, 0.02, rng));
  p.qkv_bias = &store.add(prefix + ".attn.qkv.bias", NdArray<T>({3 * dim}));
  p.proj_weight = &store.add(prefix + ".attn.proj.weight", normal_init<T>({dim, dim}, 0.02, rng));
  p.proj_bias = &store.add(prefix + ".attn.proj.bias", NdArray<T>({dim}));
  p.ln2_gamma = &store.add(prefix + ".ln2.gamma", NdArray<T>({dim}, T{1}));
  p.ln2_beta = &store.add(prefix + ".ln2.beta", NdArray<T>({dim}));
  p.fc1_weight = &store.add(prefix + ".mlp.fc1.weight", normal_init<T>({dim, hidden}, 0.02, rng));
  p.fc1_bias = &store.add(prefix + ".mlp.fc1.bias", NdArray<T>({hidden}));
  p.fc2_weight = &store.add(prefix + ".mlp.fc2.weight", normal_init<T>({hidden, dim}, 0.02, rng));
  p.fc2_bias = &store.add(prefix + ".mlp.fc2.bias", NdArray<T>({dim}));
  return p;
}

template <typename T>
Var<T> transformer_block(const Var<T>& tokens, const TransformerBlockParams<T>& p, std::size_t heads,
                         double ln_eps, std::vector<NdArray<T>>* attention) {
  using V = Var<T>;
  const T eps = static_cast<T>(ln_eps);
  auto h = ops::layer_norm(tokens, V::param(*p.ln1_gamma), V::param(*p.ln1_beta), eps);
  h = multi_head_attention(h, heads, V::param(*p.qkv_weight), std::optional<V>(V::param(*p.qkv_bias)),
                           V::param(*p.proj_weight), std::optional<V>(V::param(*p.proj_bias)), attention);
  auto x = ops::add(tokens, h);
  auto m = ops::layer_norm(x, V::param(*p.ln2_gamma), V::param(*p.ln2_beta), eps);
  m = ops::gelu(ops::linear(m, V::param(*p.fc1_weight), std::optional<V>(V::param(*p.fc1_bias))));
  m = ops::linear(m, V::param(*p.fc2_weight), std::optional<V>(V::param(*p.fc2_bias)));
  return ops::add(x, m);
}

template <typename T>
VitEncoder<T>::VitEncoder(const EncoderConfig& config, ParameterStore<T>& store, Rng& rng, const std::string& prefix)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  const std::size_t n = config_.num_patches();
  patch_weight_ = &store.add(prefix + ".patch_embed.weight", normal_init<T>({config_.patch_dim(), d}, 0.02, rng));
  patch_bias_ = &store.add(prefix + ".patch_embed.bias", NdArray<T>({d}));
  cls_token_ = &store.add(prefix + ".cls_token", normal_init<T>({d}, 0.02, rng));
  pos_embed_ = &store.add(prefix + ".pos_embed", normal_init<T>({n + 1, d}, 0.02, rng));
  for (std::size_t i = 0; i < config_.depth; ++i) {
    blocks_.push_back(register_transformer_block(store, prefix + ".blocks." + std::to_string(i), d,
                                                 config_.mlp_ratio, rng));
  }
  norm_gamma_ = &store.add(prefix + ".norm.gamma", NdArray<T>({d}, T{1}));
  norm_beta_ = &store.add(prefix + ".norm.beta", NdArray<T>({d}));
}

template <typename T>
Var<T> VitEncoder<T>::embed(const Var<T>& patches) const {
  using V = Var<T>;
  if (patches.shape().back() != config_.patch_dim()) {
    throw DimensionError("embed: patch length " + std::to_string(patches.shape().back()) + ", expected " +
                         std::to_string(config_.patch_dim()));
  }
  auto projected = ops::linear(patches, V::param(*patch_weight_), std::optional<V>(V::param(*patch_bias_)));
  auto tokens = ops::prepend_row(V::param(*cls_token_), projected);
  return ops::add_trailing(tokens, V::param(*pos_embed_));
}

template <typename T>
Var<T> VitEncoder<T>::encode(const NdArray<T>& images, std::vector<NdArray<T>>* attention) const {
  const Shape& s = images.shape();
  const Shape expect{config_.image_h, config_.image_w, config_.channels};
  if (s.size() < 3 || !std::equal(expect.begin(), expect.end(), s.end() - 3) || s.size() > 4) {
    throw DimensionError("encode: image " + shape_str(s) + " does not match config " + shape_str(expect));
  }
  auto x = embed(Var<T>::constant(extract_patches(images, config_.patch_size)));
  for (const auto& block : blocks_) x = transformer_block(x, block, config_.heads, config_.ln_eps, attention);
  return ops::layer_norm(x, Var<T>::param(*norm_gamma_), Var<T>::param(*norm_beta_), static_cast<T>(config_.ln_eps));
}

#define ANOVIT_INSTANTIATE(T)                                                                               \
  template NdArray<T> extract_patches(const NdArray<T>&, std::size_t);                                     \
  template AttentionResult<T> scaled_dot_attention(const Var<T>&, const Var<T>&, const Var<T>&);            \
  template AttentionResult<T> self_attention(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&);  \
  template Var<T> multi_head_attention(const Var<T>&, std::size_t, const Var<T>&,                          \
                                       const std::optional<Var<T>>&, const Var<T>&,                        \
                                       const std::optional<Var<T>>&, std::vector<NdArray<T>>*);            \
  template TransformerBlockParams<T> register_transformer_block(ParameterStore<T>&, const std::string&,    \
                                                                std::size_t, std::size_t, Rng&);           \
  template Var<T> transformer_block(const Var<T>&, const TransformerBlockParams<T>&, std::size_t, double,  \
                                    std::vector<NdArray<T>>*);                                             \
  template class VitEncoder<T>;

ANOVIT_INSTANTIATE(float)
ANOVIT_INSTANTIATE(double)
#undef ANOVIT_INSTANTIATE

}  // namespace anovit
