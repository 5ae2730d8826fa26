#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rnan/checkpoint.hpp"

namespace rnan {
namespace {

NetworkConfig odd_config() {
	NetworkConfig cfg = NetworkConfig::tiny(1);
	cfg.num_local_blocks = 2;
	cfg.nonlocal_positions = {1};
	cfg.global_residual = false;
	cfg.block.features = 6;
	cfg.block.nlb_channels = 3;
	cfg.block.q = 1;
	cfg.block.t = 3;
	cfg.block.downscale_stride = 3;
	cfg.block.fusion_mode = FusionMode::prior_eq7;
	return cfg;
}

std::string serialise(const NetworkConfig& cfg, const ParamStore<float>& p, bool moments) {
	std::ostringstream out(std::ios::binary);
	write_checkpoint(out, cfg, p, moments);
	return out.str();
}

TEST(Checkpoint, RoundTripsConfigAndParameters) {
	const auto cfg = odd_config();
	const auto store = Rnan(cfg).init_params<float>(5);
	std::istringstream in(serialise(cfg, store, false), std::ios::binary);
	const auto ck = read_checkpoint(in);
	EXPECT_EQ(ck.config, cfg);
	EXPECT_FALSE(ck.has_moments);
	EXPECT_EQ(ck.params, store);
}

TEST(Checkpoint, RoundTripsAdamMomentsAndStep) {
	const auto cfg = NetworkConfig::tiny();
	auto store = Rnan(cfg).init_params<float>(6);
	for (std::size_t i = 0; i < store.size(); ++i) {
		store.entry(i).adam_m = oracle::random_tensor<float>(store.value(i).shape(), 10 + i);
		store.entry(i).adam_v = oracle::random_tensor<float>(store.value(i).shape(), 100 + i, 0.0, 1.0);
	}
	store.set_step(1234);
	std::istringstream in(serialise(cfg, store, true), std::ios::binary);
	const auto ck = read_checkpoint(in);
	EXPECT_TRUE(ck.has_moments);
	EXPECT_EQ(ck.params, store);
}

TEST(Checkpoint, LayoutStartsWithMagicVersionAndLittleEndianFloats) {
	NetworkConfig cfg;
	cfg.num_local_blocks = 0;
	cfg.num_nonlocal_blocks = 0;
	auto store = Rnan(cfg).init_params<float>(1, InitMode::zero);
	store.value(0)[0] = 1.0f;
	const std::string bytes = serialise(cfg, store, false);
	EXPECT_EQ(bytes.substr(0, 4), "RNAN");
	EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
	// first tensor: name "head.weight", dims (64,3,3,3), then 1.0f = 00 00 80 3f
	const auto at = bytes.find("head.weight");
	ASSERT_NE(at, std::string::npos);
	EXPECT_EQ(bytes.substr(at - 4, 4), std::string("\x0b\x00\x00\x00", 4));
	EXPECT_EQ(bytes.substr(at + 11 + 16, 4), std::string("\x00\x00\x80\x3f", 4));
	// 4 magic + 4 version + config + 4 count + two tensors + 1 moments flag
	const std::size_t config_bytes = 4 * 3 + 4 + 1 + 4 * 5 + 1 + 4 + 1;
	const std::size_t tensors = (4 + 11 + 16 + 4 * 1728) + (4 + 9 + 16 + 4 * 64) + (4 + 11 + 16 + 4 * 1728) +
								(4 + 9 + 16 + 4 * 3);
	EXPECT_EQ(bytes.size(), 8 + config_bytes + 4 + tensors + 1);
}

TEST(Checkpoint, DoublesAreStoredAsFloats) {
	const auto cfg = NetworkConfig::tiny();
	const auto store = Rnan(cfg).init_params<double>(3);
	std::ostringstream out(std::ios::binary);
	write_checkpoint(out, cfg, store);
	std::istringstream in(out.str(), std::ios::binary);
	EXPECT_EQ(read_checkpoint(in).params, store.cast<float>());
}

TEST(Checkpoint, RejectsCorruptInput) {
	const auto cfg = NetworkConfig::tiny();
	const std::string good = serialise(cfg, Rnan(cfg).init_params<float>(1), false);
	const auto load = [](std::string bytes) {
		std::istringstream in(std::move(bytes), std::ios::binary);
		return read_checkpoint(in);
	};
	EXPECT_NO_THROW(load(good));
	EXPECT_THROW(load("RNAX" + good.substr(4)), IoError);
	EXPECT_THROW(load(good.substr(0, good.size() - 7)), IoError);
	EXPECT_THROW(load(good + "x"), IoError);
	std::string bad_version = good;
	bad_version[4] = 9;
	EXPECT_THROW(load(bad_version), IoError);
	std::string bad_name = good;
	bad_name[bad_name.find("head.weight")] = 'H';
	EXPECT_THROW(load(bad_name), IoError);
}

TEST(Checkpoint, RejectsStoreThatDoesNotMatchConfig) {
	const auto store = Rnan(NetworkConfig::tiny()).init_params<float>(1);
	std::ostringstream out;
	EXPECT_THROW(write_checkpoint(out, odd_config(), store), ConfigError);
}

TEST(Checkpoint, FileRoundTrip) {
	const auto dir = std::filesystem::temp_directory_path() / "rnan_checkpoint_test";
	std::filesystem::remove_all(dir);
	const auto cfg = NetworkConfig::tiny();
	const auto store = Rnan(cfg).init_params<float>(2);
	save_checkpoint(dir / "sub" / "net.ckpt", cfg, store);
	EXPECT_EQ(load_checkpoint(dir / "sub" / "net.ckpt").params, store);
	EXPECT_FALSE(std::filesystem::exists(dir / "sub" / "net.ckpt.tmp"));
	EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
	std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace rnan
