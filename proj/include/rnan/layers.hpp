#ifndef RNAN_LAYERS_HPP_
#define RNAN_LAYERS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "rnan/config.hpp"
#include "rnan/ops.hpp"
#include "rnan/params.hpp"
#include "rnan/random.hpp"
#include "rnan/tensor.hpp"

namespace rnan {

// ---------------------------------------------------------------------------
// Parameter planning

struct ParamSpec {
	std::string name;
	Shape shape;
	std::size_t fan_in = 1;
	bool zero_init = false;
};

/// Ordered list of parameter declarations produced while building a layout.
class ParamPlan {
public:
	std::size_t add(ParamSpec spec) {
		specs_.push_back(std::move(spec));
		return specs_.size() - 1;
	}
	const std::vector<ParamSpec>& specs() const { return specs_; }
	std::size_t total_scalars() const {
		std::size_t n = 0;
		for (const auto& s : specs_) n += s.shape.size();
		return n;
	}

private:
	std::vector<ParamSpec> specs_;
};

enum class InitMode { uniform, zero };

/**
 * Materialises a plan. Uniform mode draws every scalar from U(−a, a) with
 * a = sqrt(1 / fan_in), each tensor from its own counter stream; tensors
 * flagged zero_init (the non-local output projection) start at zero.
 */
template<typename T>
ParamStore<T> initialize(const ParamPlan& plan, std::uint64_t seed, InitMode mode = InitMode::uniform) {
	ParamStore<T> store;
	for (std::size_t i = 0; i < plan.specs().size(); ++i) {
		const auto& spec = plan.specs()[i];
		Tensor4<T> t(spec.shape);
		if (mode == InitMode::uniform && !spec.zero_init) {
			const double a = std::sqrt(1.0 / static_cast<double>(spec.fan_in));
			CounterRng rng(derive_seed(seed, i));
			for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-a, a));
		}
		store.add(spec.name, std::move(t));
	}
	return store;
}

// ---------------------------------------------------------------------------
// Convolution layer

struct ConvRef {
	static constexpr std::size_t kNoBias = static_cast<std::size_t>(-1);

	std::size_t weight = 0, bias = kNoBias;
	ConvSpec spec;

	bool has_bias() const { return bias != kNoBias; }

	static ConvRef declare(ParamPlan& plan, const std::string& prefix, const ConvSpec& spec, bool zero_init = false,
						   bool with_bias = true) {
		ConvRef r;
		r.spec = spec;
		const std::size_t fan_in = spec.patch_size();
		r.weight = plan.add({prefix + ".weight", spec.weight_shape(), fan_in, zero_init});
		if (with_bias) r.bias = plan.add({prefix + ".bias", {spec.out_channels, 1, 1, 1}, fan_in, zero_init});
		return r;
	}
	static ConvRef declare_transposed(ParamPlan& plan, const std::string& prefix, const ConvSpec& spec) {
		ConvRef r;
		r.spec = spec;
		const std::size_t fan_in = spec.out_channels * spec.kh * spec.kw;
		r.weight = plan.add({prefix + ".weight", spec.weight_shape(), fan_in, false});
		r.bias = plan.add({prefix + ".bias", {spec.in_channels, 1, 1, 1}, fan_in, false});
		return r;
	}
};

template<typename T>
std::span<const T> bias_of(const ConvRef& l, const ParamStore<T>& p) {
	if (!l.has_bias()) return {};
	return p.value(l.bias).values();
}

template<typename T>
Tensor4<T> conv_forward(const ConvRef& l, const Tensor4<T>& x, const ParamStore<T>& p) {
	return conv2d(x, p.value(l.weight), bias_of(l, p), l.spec);
}

template<typename T>
Tensor4<T> conv_backward(const ConvRef& l, const Tensor4<T>& x, const Tensor4<T>& gy, const ParamStore<T>& p,
						 Gradients<T>& g) {
	auto r = conv2d_backward(x, p.value(l.weight), l.spec, gy);
	g.accumulate(l.weight, r.dw);
	if (l.has_bias()) g.accumulate(l.bias, r.db);
	return std::move(r.dx);
}

// ---------------------------------------------------------------------------
// Simplified residual block: conv3x3 -> ReLU -> conv3x3, plus identity skip.

struct ResidualBlockRef {
	ConvRef conv1, conv2;

	static ResidualBlockRef declare(ParamPlan& plan, const std::string& prefix, std::size_t features) {
		return {ConvRef::declare(plan, prefix + ".conv1", ConvSpec::same(features, features)),
				ConvRef::declare(plan, prefix + ".conv2", ConvSpec::same(features, features))};
	}
};

template<typename T>
struct ResidualBlockCache {
	Tensor4<T> x, pre_relu, post_relu;
};

template<typename T>
Tensor4<T> residual_block(const ResidualBlockRef& l, const Tensor4<T>& x, const ParamStore<T>& p,
						  ResidualBlockCache<T>* cache = nullptr) {
	if (x.c() != l.conv1.spec.in_channels)
		throw ConfigError("residual block: input has " + std::to_string(x.c()) + " channels, expected " +
						  std::to_string(l.conv1.spec.in_channels));
	Tensor4<T> h = conv_forward(l.conv1, x, p);
	Tensor4<T> a = relu(h);
	Tensor4<T> out = conv_forward(l.conv2, a, p);
	out += x;
	if (cache) *cache = {x, std::move(h), std::move(a)};
	return out;
}

template<typename T>
Tensor4<T> residual_block_backward(const ResidualBlockRef& l, const ResidualBlockCache<T>& c, const Tensor4<T>& gy,
								   const ParamStore<T>& p, Gradients<T>& g) {
	Tensor4<T> ga = conv_backward(l.conv2, c.post_relu, gy, p, g);
	Tensor4<T> gh = relu_backward(c.pre_relu, ga);
	Tensor4<T> gx = conv_backward(l.conv1, c.x, gh, p, g);
	gx += gy;
	return gx;
}

inline std::vector<ResidualBlockRef> declare_residual_chain(ParamPlan& plan, const std::string& prefix,
															std::size_t count, std::size_t features) {
	std::vector<ResidualBlockRef> chain;
	for (std::size_t i = 0; i < count; ++i)
		chain.push_back(ResidualBlockRef::declare(plan, prefix + "." + std::to_string(i), features));
	return chain;
}

template<typename T>
Tensor4<T> residual_chain(const std::vector<ResidualBlockRef>& chain, Tensor4<T> x, const ParamStore<T>& p,
						  std::vector<ResidualBlockCache<T>>* caches = nullptr) {
	if (caches) caches->assign(chain.size(), {});
	for (std::size_t i = 0; i < chain.size(); ++i)
		x = residual_block(chain[i], x, p, caches ? &(*caches)[i] : nullptr);
	return x;
}

template<typename T>
Tensor4<T> residual_chain_backward(const std::vector<ResidualBlockRef>& chain,
								   const std::vector<ResidualBlockCache<T>>& caches, Tensor4<T> gy,
								   const ParamStore<T>& p, Gradients<T>& g) {
	for (std::size_t i = chain.size(); i-- > 0;) gy = residual_block_backward(chain[i], caches[i], gy, p, g);
	return gy;
}

// ---------------------------------------------------------------------------
// Non-local block with embedded Gaussian affinity:
//   z_i = W_z · Σ_j softmax_j(u_iᵀ v_j) g_j + x_i,  u = W_u x, v = W_v x, g = W_g x
// where every W is a bias-free 1x1 convolution. A key bias would cancel in the
// row softmax, and W_z starts at zero so the block is initially the identity.

struct NonLocalRef {
	ConvRef query, key, value, output;

	static NonLocalRef declare(ParamPlan& plan, const std::string& prefix, std::size_t features,
							   std::size_t inner) {
		const auto in = ConvSpec::same(features, inner, 1);
		return {ConvRef::declare(plan, prefix + ".query", in, false, false),
				ConvRef::declare(plan, prefix + ".key", in, false, false),
				ConvRef::declare(plan, prefix + ".value", in, false, false),
				ConvRef::declare(plan, prefix + ".output", ConvSpec::same(inner, features, 1), true, false)};
	}
};

template<typename T>
struct NonLocalCache {
	Tensor4<T> x, u, v, g, y;
	std::vector<Matrix<T>> attention;  ///< per batch item, (h·w, h·w), row i = softmax over j
};

template<typename T>
Tensor4<T> non_local_block(const NonLocalRef& l, const Tensor4<T>& x, const ParamStore<T>& p,
						   NonLocalCache<T>* cache = nullptr) {
	if (x.c() != l.query.spec.in_channels)
		throw ConfigError("non-local block: input has " + std::to_string(x.c()) + " channels, expected " +
						  std::to_string(l.query.spec.in_channels));
	Tensor4<T> u = conv_forward(l.query, x, p);
	Tensor4<T> v = conv_forward(l.key, x, p);
	Tensor4<T> g = conv_forward(l.value, x, p);
	Tensor4<T> y(g.shape());
	const Eigen::Index positions = static_cast<Eigen::Index>(x.shape().plane());
	if (cache) cache->attention.clear();
	for (std::size_t n = 0; n < x.n(); ++n) {
		const Matrix<T> um = item_as_matrix(u, n), vm = item_as_matrix(v, n), gm = item_as_matrix(g, n);
		if (cache) {
			Matrix<T> a = softmax_rows(Matrix<T>(um.transpose() * vm));
			matrix_into_item(Matrix<T>(gm * a.transpose()), y, n);
			cache->attention.push_back(std::move(a));
		} else {
			// Query rows in chunks bound the (h·w)² affinity memory at inference.
			constexpr Eigen::Index kChunk = 512;
			Matrix<T> ym(gm.rows(), positions);
			for (Eigen::Index i0 = 0; i0 < positions; i0 += kChunk) {
				const Eigen::Index len = std::min(kChunk, positions - i0);
				Matrix<T> a = softmax_rows(Matrix<T>(um.middleCols(i0, len).transpose() * vm));
				ym.middleCols(i0, len).noalias() = gm * a.transpose();
			}
			matrix_into_item(ym, y, n);
		}
	}
	Tensor4<T> z = conv_forward(l.output, y, p);
	z += x;
	if (cache) {
		cache->x = x;
		cache->u = std::move(u);
		cache->v = std::move(v);
		cache->g = std::move(g);
		cache->y = std::move(y);
	}
	return z;
}

template<typename T>
Tensor4<T> non_local_block_backward(const NonLocalRef& l, const NonLocalCache<T>& c, const Tensor4<T>& gz,
									const ParamStore<T>& p, Gradients<T>& grads) {
	Tensor4<T> gy = conv_backward(l.output, c.y, gz, p, grads);
	Tensor4<T> gu(c.u.shape()), gv(c.v.shape()), gg(c.g.shape());
	for (std::size_t n = 0; n < c.x.n(); ++n) {
		const Matrix<T> um = item_as_matrix(c.u, n), vm = item_as_matrix(c.v, n), gm = item_as_matrix(c.g, n);
		const Matrix<T> gym = item_as_matrix(gy, n);
		const Matrix<T>& a = c.attention[n];
		// y = g · aᵀ
		matrix_into_item(Matrix<T>(gym * a), gg, n);
		const Matrix<T> ga = gym.transpose() * gm;
		const Matrix<T> gs = softmax_rows_backward(a, ga);
		// s = uᵀ · v
		matrix_into_item(Matrix<T>(vm * gs.transpose()), gu, n);
		matrix_into_item(Matrix<T>(um * gs), gv, n);
	}
	Tensor4<T> gx = conv_backward(l.query, c.x, gu, p, grads);
	gx += conv_backward(l.key, c.x, gv, p, grads);
	gx += conv_backward(l.value, c.x, gg, p, grads);
	gx += gz;
	return gx;
}

// ---------------------------------------------------------------------------
// Mask branch:
//   [NLB] -> m RBs -> strided conv3x3 -> 2m RBs -> transposed conv3x3
//   -> m RBs -> conv1x1 -> sigmoid

struct MaskBranchRef {
	std::optional<NonLocalRef> non_local;
	std::vector<ResidualBlockRef> pre, mid, post;
	ConvRef down, up, squash;

	static MaskBranchRef declare(ParamPlan& plan, const std::string& prefix, const BlockConfig& cfg) {
		MaskBranchRef r;
		const std::size_t f = cfg.features;
		if (cfg.non_local) r.non_local = NonLocalRef::declare(plan, prefix + ".nlb", f, cfg.nlb_channels);
		r.pre = declare_residual_chain(plan, prefix + ".pre", cfg.m, f);
		const ConvSpec down = ConvSpec::same(f, f, 3, cfg.downscale_stride);
		r.down = ConvRef::declare(plan, prefix + ".down", down);
		r.mid = declare_residual_chain(plan, prefix + ".mid", 2 * cfg.m, f);
		r.up = ConvRef::declare_transposed(plan, prefix + ".up", down);
		r.post = declare_residual_chain(plan, prefix + ".post", cfg.m, f);
		r.squash = ConvRef::declare(plan, prefix + ".squash", ConvSpec::same(f, f, 1));
		return r;
	}
};

template<typename T>
struct MaskBranchCache {
	NonLocalCache<T> non_local;
	std::vector<ResidualBlockCache<T>> pre, mid, post;
	Tensor4<T> down_in, up_in, squash_in, out;
};

template<typename T>
Tensor4<T> mask_branch(const MaskBranchRef& l, const Tensor4<T>& x, const ParamStore<T>& p,
					   MaskBranchCache<T>* cache = nullptr) {
	Tensor4<T> t = l.non_local ? non_local_block(*l.non_local, x, p, cache ? &cache->non_local : nullptr) : x;
	t = residual_chain(l.pre, std::move(t), p, cache ? &cache->pre : nullptr);
	const std::size_t dh = l.down.spec.out_h(t.h()), dw = l.down.spec.out_w(t.w());
	if (dh < 3 || dw < 3)
		throw ConfigError("mask branch: input " + to_string(x.shape()) + " is smaller than 3x3 after downscaling");
	Tensor4<T> d = conv_forward(l.down, t, p);
	const std::pair<std::size_t, std::size_t> target{t.h(), t.w()};
	if (cache) cache->down_in = std::move(t);
	d = residual_chain(l.mid, std::move(d), p, cache ? &cache->mid : nullptr);
	Tensor4<T> up = conv2d_transpose(d, p.value(l.up.weight), p.value(l.up.bias).values(), l.up.spec, target);
	if (cache) cache->up_in = std::move(d);
	up = residual_chain(l.post, std::move(up), p, cache ? &cache->post : nullptr);
	Tensor4<T> s = conv_forward(l.squash, up, p);
	if (cache) cache->squash_in = std::move(up);
	Tensor4<T> out = sigmoid(s);
	if (cache) cache->out = out;
	return out;
}

template<typename T>
Tensor4<T> mask_branch_backward(const MaskBranchRef& l, const MaskBranchCache<T>& c, const Tensor4<T>& gy,
								const ParamStore<T>& p, Gradients<T>& g) {
	Tensor4<T> gs = sigmoid_backward(c.out, gy);
	Tensor4<T> gt = conv_backward(l.squash, c.squash_in, gs, p, g);
	gt = residual_chain_backward(l.post, c.post, std::move(gt), p, g);
	auto up = conv2d_transpose_backward(c.up_in, p.value(l.up.weight), l.up.spec, gt);
	g.accumulate(l.up.weight, up.dw);
	g.accumulate(l.up.bias, up.db);
	gt = residual_chain_backward(l.mid, c.mid, std::move(up.dx), p, g);
	gt = conv_backward(l.down, c.down_in, gt, p, g);
	gt = residual_chain_backward(l.pre, c.pre, std::move(gt), p, g);
	if (l.non_local) gt = non_local_block_backward(*l.non_local, c.non_local, gt, p, g);
	return gt;
}

// ---------------------------------------------------------------------------
// Attention block: q RBs -> {trunk, mask} -> fusion -> q RBs

/// Merges trunk output, mask output and the block's shared input.
template<typename T>
Tensor4<T> fuse(FusionMode mode, const Tensor4<T>& trunk, const std::type_identity_t<Tensor4<T>>* mask,
				const Tensor4<T>& input) {
	detail::require_same(trunk.shape(), input.shape(), "fuse");
	Tensor4<T> out(trunk.shape());
	switch (mode) {
	case FusionMode::proposed_eq8:
		detail::require_same(mask->shape(), input.shape(), "fuse");
		for (std::size_t i = 0; i < out.size(); ++i) out[i] = trunk[i] * (*mask)[i] + input[i];
		break;
	case FusionMode::prior_eq7:
		detail::require_same(mask->shape(), input.shape(), "fuse");
		for (std::size_t i = 0; i < out.size(); ++i) out[i] = trunk[i] * ((*mask)[i] + T(1));
		break;
	case FusionMode::none:
		for (std::size_t i = 0; i < out.size(); ++i) out[i] = trunk[i] + input[i];
		break;
	}
	return out;
}

template<typename T>
struct FuseGrads {
	Tensor4<T> trunk, mask, input;
};

template<typename T>
FuseGrads<T> fuse_backward(FusionMode mode, const Tensor4<T>& trunk, const Tensor4<T>* mask, const Tensor4<T>& gy) {
	FuseGrads<T> r{Tensor4<T>(gy.shape()), {}, Tensor4<T>(gy.shape())};
	switch (mode) {
	case FusionMode::proposed_eq8:
		r.trunk = mul(gy, *mask);
		r.mask = mul(gy, trunk);
		r.input = gy;
		break;
	case FusionMode::prior_eq7:
		r.mask = mul(gy, trunk);
		for (std::size_t i = 0; i < gy.size(); ++i) r.trunk[i] = gy[i] * ((*mask)[i] + T(1));
		break;
	case FusionMode::none:
		r.trunk = gy;
		r.input = gy;
		break;
	}
	return r;
}

/**
 * Layout of one residual (non-)local attention block. Without a mask branch
 * (fusion none) a non-local block, if requested, is placed in front of the
 * trunk so that the ablation "non-local on, mask off" still has one.
 */
struct AttentionBlockRef {
	std::vector<ResidualBlockRef> head, trunk, tail;
	std::optional<MaskBranchRef> mask;
	std::optional<NonLocalRef> trunk_non_local;
	FusionMode fusion = FusionMode::proposed_eq8;

	static AttentionBlockRef declare(ParamPlan& plan, const std::string& prefix, const BlockConfig& cfg) {
		cfg.validate();
		AttentionBlockRef r;
		r.fusion = cfg.fusion_mode;
		r.head = declare_residual_chain(plan, prefix + ".head", cfg.q, cfg.features);
		if (cfg.fusion_mode == FusionMode::none && cfg.non_local)
			r.trunk_non_local = NonLocalRef::declare(plan, prefix + ".trunk.nlb", cfg.features, cfg.nlb_channels);
		r.trunk = declare_residual_chain(plan, prefix + ".trunk", cfg.t, cfg.features);
		if (cfg.fusion_mode != FusionMode::none) r.mask = MaskBranchRef::declare(plan, prefix + ".mask", cfg);
		r.tail = declare_residual_chain(plan, prefix + ".tail", cfg.q, cfg.features);
		return r;
	}
};

template<typename T>
struct AttentionBlockCache {
	std::vector<ResidualBlockCache<T>> head, trunk, tail;
	NonLocalCache<T> trunk_non_local;
	MaskBranchCache<T> mask;
	Tensor4<T> shared;      ///< u, output of the head RBs
	Tensor4<T> trunk_out;
	Tensor4<T> mask_out;
	Tensor4<T> fused;
};

template<typename T>
Tensor4<T> attention_block(const AttentionBlockRef& l, const Tensor4<T>& x, const ParamStore<T>& p,
						   AttentionBlockCache<T>* cache = nullptr) {
	Tensor4<T> u = residual_chain(l.head, x, p, cache ? &cache->head : nullptr);
	Tensor4<T> t = l.trunk_non_local
					   ? non_local_block(*l.trunk_non_local, u, p, cache ? &cache->trunk_non_local : nullptr)
					   : u;
	t = residual_chain(l.trunk, std::move(t), p, cache ? &cache->trunk : nullptr);
	std::optional<Tensor4<T>> m;
	if (l.mask) m = mask_branch(*l.mask, u, p, cache ? &cache->mask : nullptr);
	Tensor4<T> fused = fuse(l.fusion, t, m ? &*m : nullptr, u);
	if (cache) {
		cache->shared = std::move(u);
		cache->trunk_out = std::move(t);
		if (m) cache->mask_out = std::move(*m);
		cache->fused = fused;
	}
	return residual_chain(l.tail, std::move(fused), p, cache ? &cache->tail : nullptr);
}

template<typename T>
Tensor4<T> attention_block_backward(const AttentionBlockRef& l, const AttentionBlockCache<T>& c, const Tensor4<T>& gy,
									const ParamStore<T>& p, Gradients<T>& g) {
	Tensor4<T> gf = residual_chain_backward(l.tail, c.tail, gy, p, g);
	auto fg = fuse_backward(l.fusion, c.trunk_out, l.mask ? &c.mask_out : nullptr, gf);
	Tensor4<T> gu = std::move(fg.input);
	Tensor4<T> gt = residual_chain_backward(l.trunk, c.trunk, std::move(fg.trunk), p, g);
	if (l.trunk_non_local) gt = non_local_block_backward(*l.trunk_non_local, c.trunk_non_local, gt, p, g);
	gu += gt;
	if (l.mask) gu += mask_branch_backward(*l.mask, c.mask, fg.mask, p, g);
	return residual_chain_backward(l.head, c.head, std::move(gu), p, g);
}

}  // namespace rnan

#endif  // RNAN_LAYERS_HPP_
