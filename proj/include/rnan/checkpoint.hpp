#ifndef RNAN_CHECKPOINT_HPP_
#define RNAN_CHECKPOINT_HPP_

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rnan/config.hpp"
#include "rnan/network.hpp"
#include "rnan/params.hpp"

// Binary layout (all integers little-endian):
//
//   "RNAN"  u32 version
//   config: u32 num_local u32 num_nonlocal u32 npos {u32 pos}*npos u32 in_channels u8 global_residual
//           u32 q u32 t u32 m u32 features u32 nlb_channels u8 non_local u32 downscale_stride u8 fusion
//   u32 count, then per parameter: u32 name_len, name bytes, 4 × u32 dims, f32 data
//   u8 has_moments; if set: u64 step, then the m tensors and the v tensors in the layout above
//
// Parameters are stored as 32-bit floats whatever the in-memory scalar type.

namespace rnan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
	NetworkConfig config;
	ParamStore<float> params;
	bool has_moments = false;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
public:
	explicit Writer(std::ostream& out) : out_(out) {}

	template<typename U>
	void scalar(U v) {
		static_assert(std::is_trivially_copyable_v<U>);
		auto bytes = std::bit_cast<std::array<char, sizeof(U)>>(v);
		if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
		out_.write(bytes.data(), bytes.size());
	}
	void u32(std::size_t v) {
		if (v > UINT32_MAX) throw IoError("checkpoint field exceeds 32 bits");
		scalar(static_cast<std::uint32_t>(v));
	}
	void flag(bool b) { scalar(static_cast<std::uint8_t>(b)); }
	void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

	template<typename T>
	void tensor(const std::string& name, const Tensor4<T>& t) {
		u32(name.size());
		bytes(name);
		for (std::size_t d : {t.n(), t.c(), t.h(), t.w()}) u32(d);
		for (const T v : t.values()) scalar(static_cast<float>(v));
	}

private:
	std::ostream& out_;
};

class Reader {
public:
	Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

	template<typename U>
	U scalar() {
		std::array<char, sizeof(U)> bytes{};
		in_.read(bytes.data(), bytes.size());
		if (!in_) fail("truncated file");
		if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
		return std::bit_cast<U>(bytes);
	}
	std::size_t u32() { return scalar<std::uint32_t>(); }
	bool flag() {
		const auto b = scalar<std::uint8_t>();
		if (b > 1) fail("invalid boolean byte");
		return b == 1;
	}
	std::string bytes(std::size_t n) {
		if (n > (1u << 16)) fail("implausible name length " + std::to_string(n));
		std::string s(n, '\0');
		in_.read(s.data(), static_cast<std::streamsize>(n));
		if (!in_) fail("truncated file");
		return s;
	}

	Tensor4f tensor(const std::string& expected_name, const Shape& expected_shape) {
		const std::string name = bytes(u32());
		if (name != expected_name) fail("expected tensor '" + expected_name + "', found '" + name + "'");
		Shape s;
		s.n = u32();
		s.c = u32();
		s.h = u32();
		s.w = u32();
		if (s != expected_shape)
			fail("tensor '" + name + "' has shape " + to_string(s) + ", expected " + to_string(expected_shape));
		Tensor4f t(s);
		for (auto& v : t.values()) v = scalar<float>();
		return t;
	}

	[[noreturn]] void fail(const std::string& what) const { throw IoError("checkpoint " + origin_ + ": " + what); }

private:
	std::istream& in_;
	std::string origin_;
};

inline void write_config(Writer& w, const NetworkConfig& cfg) {
	w.u32(cfg.num_local_blocks);
	w.u32(cfg.num_nonlocal_blocks);
	w.u32(cfg.nonlocal_positions.size());
	for (std::size_t p : cfg.nonlocal_positions) w.u32(p);
	w.u32(cfg.in_channels);
	w.flag(cfg.global_residual);
	const BlockConfig& b = cfg.block;
	for (std::size_t v : {b.q, b.t, b.m, b.features, b.nlb_channels}) w.u32(v);
	w.flag(b.non_local);
	w.u32(b.downscale_stride);
	w.scalar(static_cast<std::uint8_t>(b.fusion_mode));
}

inline NetworkConfig read_config(Reader& r) {
	NetworkConfig cfg;
	cfg.num_local_blocks = r.u32();
	cfg.num_nonlocal_blocks = r.u32();
	const std::size_t npos = r.u32();
	if (npos > 4096) r.fail("implausible non-local position count");
	for (std::size_t i = 0; i < npos; ++i) cfg.nonlocal_positions.push_back(r.u32());
	cfg.in_channels = r.u32();
	cfg.global_residual = r.flag();
	BlockConfig& b = cfg.block;
	b.q = r.u32();
	b.t = r.u32();
	b.m = r.u32();
	b.features = r.u32();
	b.nlb_channels = r.u32();
	b.non_local = r.flag();
	b.downscale_stride = r.u32();
	const auto fusion = r.scalar<std::uint8_t>();
	if (fusion > static_cast<std::uint8_t>(FusionMode::none)) r.fail("unknown fusion mode " + std::to_string(fusion));
	b.fusion_mode = static_cast<FusionMode>(fusion);
	try {
		cfg.validate();
	} catch (const ConfigError& e) {
		r.fail(std::string("invalid network config: ") + e.what());
	}
	return cfg;
}

}  // namespace detail

/// Serialises config and parameters; Adam moments and step are appended when `with_moments`.
template<typename T>
void write_checkpoint(std::ostream& out, const NetworkConfig& cfg, const ParamStore<T>& params,
					  bool with_moments = false) {
	Rnan(cfg).check_store(params);
	detail::Writer w(out);
	w.bytes("RNAN");
	w.scalar(kCheckpointVersion);
	detail::write_config(w, cfg);
	w.u32(params.size());
	for (const auto& e : params) w.tensor(e.name, e.value);
	w.flag(with_moments);
	if (with_moments) {
		w.scalar(static_cast<std::uint64_t>(params.step()));
		for (const auto& e : params) w.tensor(e.name, e.adam_m);
		for (const auto& e : params) w.tensor(e.name, e.adam_v);
	}
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& origin = "<stream>") {
	detail::Reader r(in, origin);
	if (r.bytes(4) != "RNAN") r.fail("bad magic (not an RNAN checkpoint)");
	const auto version = r.scalar<std::uint32_t>();
	if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));

	Checkpoint ck;
	ck.config = detail::read_config(r);
	const Rnan net(ck.config);
	const auto& specs = net.plan().specs();
	const std::size_t count = r.u32();
	if (count != specs.size())
		r.fail(std::to_string(count) + " tensors stored, config needs " + std::to_string(specs.size()));
	for (const auto& spec : specs) ck.params.add(spec.name, r.tensor(spec.name, spec.shape));
	ck.has_moments = r.flag();
	if (ck.has_moments) {
		ck.params.set_step(r.scalar<std::uint64_t>());
		for (std::size_t i = 0; i < specs.size(); ++i) ck.params.entry(i).adam_m = r.tensor(specs[i].name, specs[i].shape);
		for (std::size_t i = 0; i < specs.size(); ++i) ck.params.entry(i).adam_v = r.tensor(specs[i].name, specs[i].shape);
	}
	if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after last tensor");
	return ck;
}

template<typename T>
void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& cfg, const ParamStore<T>& params,
					 bool with_moments = false) {
	if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
	// write to a sibling file first so an interrupted save never clobbers a good checkpoint
	const auto tmp = std::filesystem::path(path).concat(".tmp");
	{
		std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
		if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
		write_checkpoint(out, cfg, params, with_moments);
		out.flush();
		if (!out) throw IoError("failed writing '" + tmp.string() + "'");
	}
	std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
	return read_checkpoint(in, "'" + path.string() + "'");
}

}  // namespace rnan

#endif  // RNAN_CHECKPOINT_HPP_
