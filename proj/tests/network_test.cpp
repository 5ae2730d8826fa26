#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rnan/network.hpp"

namespace rnan {
namespace {

using oracle::random_tensor;

TEST(Rnan, ZeroWeightsWithGlobalResidualIsIdentity) {
	const auto cfg = NetworkConfig::tiny();
	const Rnan net(cfg);
	const auto store = net.init_params<double>(1, InitMode::zero);
	const auto img = random_tensor<double>({1, 3, 12, 11}, 2, 0.0, 1.0);
	EXPECT_EQ(net.forward(img, store), img);
	EXPECT_EQ(rnan_forward(img, store, cfg), img);
}

TEST(Rnan, PreservesArbitraryShape) {
	auto cfg = NetworkConfig::tiny();
	cfg.block.features = 8;
	cfg.block.nlb_channels = 4;
	const Rnan net(cfg);
	const auto store = net.init_params<float>(3);
	const auto img = random_tensor<float>({1, 3, 17, 23}, 4, 0.0, 1.0);
	EXPECT_EQ(net.forward(img, store).shape(), img.shape());
}

TEST(Rnan, GrayscaleAndNoGlobalResidual) {
	auto cfg = NetworkConfig::tiny(1);
	cfg.global_residual = false;
	const Rnan net(cfg);
	const auto store = net.init_params<double>(5, InitMode::zero);
	const auto img = random_tensor<double>({2, 1, 9, 9}, 6, 0.0, 1.0);
	// zero weights without the skip give a zero image
	EXPECT_EQ(net.forward(img, store), Tensor4d(img.shape()));
	EXPECT_THROW(net.forward(random_tensor<double>({1, 3, 9, 9}, 7), store), ConfigError);
}

TEST(Rnan, RejectsForeignParameterStore) {
	const auto tiny = NetworkConfig::tiny();
	auto other = tiny;
	other.block.features = 8;
	const auto store = Rnan(other).init_params<double>(1);
	EXPECT_THROW(rnan_forward(random_tensor<double>({1, 3, 8, 8}, 1), store, tiny), ConfigError);
}

TEST(Rnan, CachedForwardMatchesPlainForward) {
	const auto cfg = NetworkConfig::tiny();
	const Rnan net(cfg);
	const auto store = net.init_params<float>(9);
	const auto img = random_tensor<float>({2, 3, 10, 12}, 10, 0.0, 1.0);
	NetworkCache<float> cache;
	EXPECT_EQ(net.forward(img, store, &cache), net.forward(img, store));
	EXPECT_EQ(cache.blocks.size(), 2u);
}

TEST(Rnan, FloatAndDoubleAgree) {
	const auto cfg = NetworkConfig::tiny();
	const Rnan net(cfg);
	const auto sd = net.init_params<double>(11);
	const auto img = random_tensor<double>({1, 3, 9, 10}, 12, 0.0, 1.0);
	const auto yd = net.forward(img, sd);
	const auto yf = net.forward(img.cast<float>(), sd.cast<float>());
	EXPECT_LT(max_abs_diff(yd, yf.cast<double>()), 1e-4);
}

TEST(Rnan, InitialisationIsSeededAndZeroesOutputProjection) {
	const Rnan net(NetworkConfig::tiny());
	const auto a = net.init_params<float>(42), b = net.init_params<float>(42), c = net.init_params<float>(43);
	EXPECT_EQ(a, b);
	EXPECT_FALSE(a == c);
	const auto& wz = a.value("blocks.0.mask.nlb.output.weight");
	for (float v : wz.values()) EXPECT_EQ(v, 0.0f);
	const auto& head = a.value("head.weight");
	const float bound = std::sqrt(1.0f / 27.0f);
	for (float v : head.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(NonLocalPositions, DefaultSpreadCoversBothEnds) {
	NetworkConfig cfg;
	EXPECT_EQ(cfg.resolved_nonlocal_positions(), (std::vector<std::size_t>{0, 9}));
	cfg.num_nonlocal_blocks = 1;
	EXPECT_EQ(cfg.resolved_nonlocal_positions(), (std::vector<std::size_t>{0}));
	cfg.num_nonlocal_blocks = 3;
	cfg.num_local_blocks = 2;
	EXPECT_EQ(cfg.resolved_nonlocal_positions(), (std::vector<std::size_t>{0, 2, 4}));
	EXPECT_TRUE(cfg.is_nonlocal(2));
	EXPECT_FALSE(cfg.is_nonlocal(1));
}

TEST(NonLocalPositions, Validation) {
	NetworkConfig cfg;
	cfg.nonlocal_positions = {0, 0};
	EXPECT_THROW(cfg.validate(), ConfigError);
	cfg.nonlocal_positions = {0, 10};
	EXPECT_THROW(cfg.validate(), ConfigError);
	cfg.nonlocal_positions = {3};
	EXPECT_THROW(cfg.validate(), ConfigError);
	cfg.nonlocal_positions = {3, 5};
	EXPECT_NO_THROW(cfg.validate());
	const Rnan net(cfg);
	EXPECT_TRUE(net.blocks()[3].mask->non_local.has_value());
	EXPECT_FALSE(net.blocks()[4].mask->non_local.has_value());
}

TEST(BlockConfig, Validation) {
	BlockConfig b;
	EXPECT_NO_THROW(b.validate());
	b.downscale_stride = 1;
	EXPECT_THROW(b.validate(), ConfigError);
	b = {};
	b.m = 0;
	EXPECT_THROW(b.validate(), ConfigError);
	b = {};
	b.nlb_channels = 0;
	EXPECT_THROW(b.validate(), ConfigError);
	EXPECT_THROW(parse_fusion_mode("eq9"), ConfigError);
	EXPECT_EQ(parse_fusion_mode("prior_eq7"), FusionMode::prior_eq7);
}

TEST(CountParameters, ZeroBlockNetworkClosedForm) {
	NetworkConfig cfg;
	cfg.num_local_blocks = 0;
	cfg.num_nonlocal_blocks = 0;
	EXPECT_EQ(count_parameters(cfg), 3u * 64 * 9 + 64 + 64u * 3 * 9 + 3);
	EXPECT_EQ(count_parameters(cfg), 3523u);
}

TEST(CountParameters, DefaultWithinFifteenPercentOfReference) {
	const double n = static_cast<double>(count_parameters(NetworkConfig{}));
	EXPECT_NEAR(n / 7'409'000.0, 1.0, 0.15) << n;
}

TEST(CountParameters, OnePlusOneWithinFifteenPercentOfReference) {
	NetworkConfig cfg;
	cfg.num_local_blocks = 1;
	cfg.num_nonlocal_blocks = 1;
	const double n = static_cast<double>(count_parameters(cfg));
	EXPECT_NEAR(n / 1'494'000.0, 1.0, 0.15) << n;
}

TEST(CountParameters, AdditiveOverBlocks) {
	NetworkConfig cfg;
	cfg.num_nonlocal_blocks = 2;
	std::vector<std::size_t> counts;
	for (std::size_t k = 0; k < 5; ++k) {
		cfg.num_local_blocks = k;
		counts.push_back(count_parameters(cfg));
	}
	for (std::size_t k = 1; k + 1 < counts.size(); ++k)
		EXPECT_EQ(counts[k + 1] - counts[k], counts[1] - counts[0]);
}

TEST(CountParameters, MatchesInitialisedStoreAndBreakdown) {
	const auto cfg = NetworkConfig::tiny();
	const Rnan net(cfg);
	EXPECT_EQ(net.init_params<float>(1).total_scalars(), count_parameters(cfg));
	const auto groups = parameter_breakdown(cfg);
	ASSERT_EQ(groups.size(), 4u);
	EXPECT_EQ(groups.front().first, "head");
	EXPECT_EQ(groups[1].first, "blocks.0");
	EXPECT_EQ(groups.back().first, "tail");
	std::size_t total = 0;
	for (const auto& [name, n] : groups) total += n;
	EXPECT_EQ(total, count_parameters(cfg));
}

}  // namespace
}  // namespace rnan
