#ifndef RNAN_IO_HPP_
#define RNAN_IO_HPP_

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rnan/degrade.hpp"
#include "rnan/layers.hpp"
#include "rnan/train.hpp"

namespace rnan {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- images

namespace detail {

inline std::string lower_extension(const fs::path& p) {
	std::string e = p.extension().string();
	std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
	return e;
}

inline Tensor4f from_interleaved(const std::vector<std::uint8_t>& px, std::size_t h, std::size_t w, std::size_t c) {
	Tensor4f t({1, c, h, w});
	for (std::size_t y = 0; y < h; ++y)
		for (std::size_t x = 0; x < w; ++x)
			for (std::size_t k = 0; k < c; ++k) t(0, k, y, x) = static_cast<float>(px[(y * w + x) * c + k]) / 255.0f;
	return t;
}

inline std::uint8_t to_byte(float v) {
	return static_cast<std::uint8_t>(std::clamp(std::lround(static_cast<double>(v) * 255.0), 0L, 255L));
}

inline std::vector<std::uint8_t> to_interleaved(const Tensor4f& t) {
	std::vector<std::uint8_t> px(t.h() * t.w() * t.c());
	for (std::size_t y = 0; y < t.h(); ++y)
		for (std::size_t x = 0; x < t.w(); ++x)
			for (std::size_t k = 0; k < t.c(); ++k) px[(y * t.w() + x) * t.c() + k] = to_byte(t(0, k, y, x));
	return px;
}

inline Tensor4f read_png(const fs::path& path) {
	png_image img{};
	img.version = PNG_IMAGE_VERSION;
	if (!png_image_begin_read_from_file(&img, path.c_str()))
		throw IoError("cannot read " + path.string() + ": " + img.message);
	// alpha is dropped; palette and 16-bit images are reduced to 8-bit gray or RGB
	const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
	img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
	std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
	if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
		const std::string msg = img.message;
		png_image_free(&img);
		throw IoError("cannot decode " + path.string() + ": " + msg);
	}
	return from_interleaved(px, img.height, img.width, color ? 3 : 1);
}

inline void write_png(const fs::path& path, const Tensor4f& t) {
	png_image img{};
	img.version = PNG_IMAGE_VERSION;
	img.width = static_cast<png_uint_32>(t.w());
	img.height = static_cast<png_uint_32>(t.h());
	img.format = t.c() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
	const auto px = to_interleaved(t);
	if (!png_image_write_to_file(&img, path.c_str(), 0, px.data(), 0, nullptr))
		throw IoError("cannot write " + path.string() + ": " + img.message);
}

// Skips whitespace and '#' comments between PNM header tokens.
inline std::size_t pnm_number(std::istream& is, const fs::path& path) {
	for (;;) {
		const int ch = is.peek();
		if (ch == '#') {
			std::string line;
			std::getline(is, line);
		} else if (std::isspace(ch)) {
			is.get();
		} else {
			break;
		}
	}
	std::size_t v = 0;
	if (!(is >> v)) throw IoError("malformed PNM header in " + path.string());
	return v;
}

inline Tensor4f read_pnm(const fs::path& path) {
	std::ifstream is(path, std::ios::binary);
	if (!is) throw IoError("cannot open " + path.string());
	std::string magic(2, '\0');
	is.read(magic.data(), 2);
	if (magic != "P5" && magic != "P6") throw IoError(path.string() + " is not a binary PGM/PPM file");
	const std::size_t c = magic == "P6" ? 3 : 1;
	const std::size_t w = pnm_number(is, path), h = pnm_number(is, path), maxval = pnm_number(is, path);
	if (maxval != 255) throw IoError(path.string() + ": only maxval 255 is supported");
	if (w == 0 || h == 0) throw IoError(path.string() + ": empty image");
	is.get();  // the single whitespace byte ending the header
	std::vector<std::uint8_t> px(w * h * c);
	if (!is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size())))
		throw IoError(path.string() + ": truncated pixel data");
	return from_interleaved(px, h, w, c);
}

inline void write_pnm(const fs::path& path, const Tensor4f& t) {
	std::ofstream os(path, std::ios::binary);
	if (!os) throw IoError("cannot write " + path.string());
	os << (t.c() == 3 ? "P6" : "P5") << '\n' << t.w() << ' ' << t.h() << "\n255\n";
	const auto px = to_interleaved(t);
	os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
	if (!os) throw IoError("cannot write " + path.string());
}

}  // namespace detail

inline bool is_image_path(const fs::path& p) {
	const auto e = detail::lower_extension(p);
	return e == ".png" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

/// Loads an 8-bit image as a (1, C, H, W) tensor in [0, 1], C = 1 or 3.
inline Tensor4f read_image(const fs::path& path) {
	const auto e = detail::lower_extension(path);
	if (e == ".png") return detail::read_png(path);
	if (e == ".pgm" || e == ".ppm" || e == ".pnm") return detail::read_pnm(path);
	throw IoError("unsupported image type: " + path.string());
}

/// Rounds and clamps to 8 bits; the format follows the extension.
inline void write_image(const fs::path& path, const Tensor4f& img) {
	if (img.n() != 1 || (img.c() != 1 && img.c() != 3))
		throw ConfigError("write_image: expected a single 1- or 3-channel image, got " + to_string(img.shape()));
	const auto e = detail::lower_extension(path);
	if (e == ".png")
		detail::write_png(path, img);
	else if (e == ".pgm" || e == ".ppm" || e == ".pnm")
		detail::write_pnm(path, img);
	else
		throw IoError("unsupported image type: " + path.string());
}

using NamedImages = std::vector<std::pair<std::string, Tensor4f>>;

/**
 * Every image file directly inside `dir`, in file-name order. A single file
 * is also accepted. Unreadable files are reported to `warn` and skipped.
 */
inline NamedImages load_images(const fs::path& dir, std::ostream* warn = nullptr) {
	std::vector<fs::path> files;
	if (fs::is_regular_file(dir)) {
		files.push_back(dir);
	} else if (fs::is_directory(dir)) {
		for (const auto& e : fs::directory_iterator(dir))
			if (e.is_regular_file() && is_image_path(e.path())) files.push_back(e.path());
		std::sort(files.begin(), files.end());
	} else {
		throw IoError("no such file or directory: " + dir.string());
	}
	NamedImages out;
	for (const auto& f : files) {
		try {
			out.emplace_back(f.filename().string(), read_image(f));
		} catch (const IoError& e) {
			if (warn) *warn << "warning: skipping " << e.what() << '\n';
		}
	}
	return out;
}

/// Keeps `c` channels: RGB→gray by channel mean, gray→RGB by replication.
inline Tensor4f convert_channels(const Tensor4f& img, std::size_t c) {
	if (img.c() == c) return img;
	Tensor4f out({img.n(), c, img.h(), img.w()});
	for (std::size_t n = 0; n < img.n(); ++n)
		for (std::size_t y = 0; y < img.h(); ++y)
			for (std::size_t x = 0; x < img.w(); ++x) {
				float mean = 0;
				for (std::size_t k = 0; k < img.c(); ++k) mean += img(n, k, y, x);
				mean /= static_cast<float>(img.c());
				for (std::size_t k = 0; k < c; ++k) out(n, k, y, x) = mean;
			}
	return out;
}

// ---------------------------------------------------------------- config

struct Paths {
	fs::path corpus_dir{};
	fs::path eval_dir{};
	fs::path input{};  ///< degrade / infer input file or directory
	fs::path checkpoint{};
	fs::path out_dir{"out"};
};

struct CliConfig {
	NetworkConfig network{};
	TrainConfig train{};
	DegradationSpec degradation{};
	InitMode init = InitMode::uniform;
	Paths paths{};

	void validate() const {
		network.validate();
		train.validate();
		degradation.validate();
	}
};

namespace detail {

inline std::vector<std::size_t> parse_index_list(const std::string& s) {
	std::vector<std::size_t> out;
	std::stringstream ss(s);
	std::string item;
	while (std::getline(ss, item, ',')) {
		item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
		if (item.empty()) continue;
		std::size_t used = 0;
		unsigned long long v = 0;
		try {
			v = std::stoull(item, &used);
		} catch (const std::exception&) {
			used = 0;
		}
		if (used != item.size()) throw ConfigError("expected a list of block indices, got '" + s + "'");
		out.push_back(static_cast<std::size_t>(v));
	}
	return out;
}

inline bool parse_bool(const std::string& key, std::string v) {
	std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
	if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
	if (v == "0" || v == "false" || v == "no" || v == "off") return false;
	throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline InitMode parse_init_mode(const std::string& s) {
	if (s == "uniform") return InitMode::uniform;
	if (s == "zero") return InitMode::zero;
	throw ConfigError("unknown init mode '" + s + "' (uniform or zero)");
}

// Typed lookup that names the offending key when a value does not parse.
template<typename V>
void read_key(const boost::property_tree::ptree& pt, const std::string& key, V& target) {
	const auto node = pt.get_child_optional(boost::property_tree::ptree::path_type(key, '.'));
	if (!node) return;
	const auto v = node->get_value_optional<V>();
	if (!v) throw ConfigError("config key " + key + ": cannot parse '" + node->data() + "'");
	target = *v;
}

template<typename V>
void read_size(const boost::property_tree::ptree& pt, const std::string& key, V& target) {
	long long v = static_cast<long long>(target);
	read_key(pt, key, v);
	if (v < 0) throw ConfigError("config key " + key + " must not be negative");
	target = static_cast<V>(v);
}

}  // namespace detail

inline const std::vector<std::string>& known_config_keys() {
	static const std::vector<std::string> keys{
		"network.preset", "network.num_local_blocks", "network.num_nonlocal_blocks", "network.nonlocal_positions",
		"network.in_channels", "network.global_residual", "network.q", "network.t", "network.m", "network.features",
		"network.nlb_channels", "network.downscale_stride", "network.fusion", "network.init", "train.preset",
		"train.batch_size", "train.patch_size", "train.lr", "train.lr_halve_every", "train.beta1", "train.beta2",
		"train.adam_eps", "train.max_iters", "train.seed", "train.checkpoint_every", "train.augment", "degrade.kind",
		"degrade.sigma", "degrade.pattern", "degrade.quality", "degrade.scale", "degrade.seed", "paths.corpus",
		"paths.eval", "paths.input", "paths.checkpoint", "paths.out"};
	return keys;
}

/**
 * Parses the INI-style config documented in the README; `#` and `;` start a
 * comment anywhere on a line. Presets are applied first, so individual keys
 * in the same file refine them. Unknown sections or keys are rejected to
 * catch typos; relative paths resolve against the config file's directory.
 */
inline CliConfig parse_config(std::istream& is, const fs::path& base_dir = {}) {
	namespace pt = boost::property_tree;
	// comments may also trail a value; no value contains '#' or ';'
	std::ostringstream stripped;
	for (std::string line; std::getline(is, line);) stripped << line.substr(0, line.find_first_of("#;")) << '\n';
	std::istringstream clean(stripped.str());
	pt::ptree tree;
	try {
		pt::read_ini(clean, tree);
	} catch (const pt::ini_parser_error& e) {
		throw ConfigError(std::string("config: ") + e.what());
	}
	const auto& known = known_config_keys();
	for (const auto& [section, body] : tree) {
		if (!body.data().empty()) throw ConfigError("config: key '" + section + "' outside any section");
		for (const auto& [key, value] : body)
			if (std::find(known.begin(), known.end(), section + "." + key) == known.end())
				throw ConfigError("config: unknown key [" + section + "] " + key);
	}

	CliConfig cfg;
	using detail::read_key;
	using detail::read_size;
	std::string s;
	if (const auto p = tree.get_optional<std::string>("network.preset")) {
		if (*p == "tiny") cfg.network = NetworkConfig::tiny();
		else if (*p != "default") throw ConfigError("config: unknown network preset '" + *p + "' (default or tiny)");
	}
	if (const auto p = tree.get_optional<std::string>("train.preset")) {
		if (*p == "desk") cfg.train = TrainConfig::desk();
		else if (*p != "default") throw ConfigError("config: unknown train preset '" + *p + "' (default or desk)");
	}

	auto& n = cfg.network;
	read_size(tree, "network.num_local_blocks", n.num_local_blocks);
	read_size(tree, "network.num_nonlocal_blocks", n.num_nonlocal_blocks);
	if (const auto v = tree.get_optional<std::string>("network.nonlocal_positions"))
		n.nonlocal_positions = detail::parse_index_list(*v);
	read_size(tree, "network.in_channels", n.in_channels);
	if (const auto v = tree.get_optional<std::string>("network.global_residual"))
		n.global_residual = detail::parse_bool("network.global_residual", *v);
	read_size(tree, "network.q", n.block.q);
	read_size(tree, "network.t", n.block.t);
	read_size(tree, "network.m", n.block.m);
	read_size(tree, "network.features", n.block.features);
	read_size(tree, "network.nlb_channels", n.block.nlb_channels);
	read_size(tree, "network.downscale_stride", n.block.downscale_stride);
	if (const auto v = tree.get_optional<std::string>("network.fusion")) n.block.fusion_mode = parse_fusion_mode(*v);
	if (const auto v = tree.get_optional<std::string>("network.init")) cfg.init = detail::parse_init_mode(*v);

	auto& t = cfg.train;
	read_size(tree, "train.batch_size", t.batch_size);
	read_size(tree, "train.patch_size", t.patch_size);
	read_key(tree, "train.lr", t.lr0);
	read_size(tree, "train.lr_halve_every", t.lr_halve_every);
	read_key(tree, "train.beta1", t.adam_beta1);
	read_key(tree, "train.beta2", t.adam_beta2);
	read_key(tree, "train.adam_eps", t.adam_eps);
	read_size(tree, "train.max_iters", t.max_iters);
	read_size(tree, "train.seed", t.seed);
	read_size(tree, "train.checkpoint_every", t.checkpoint_every);
	if (const auto v = tree.get_optional<std::string>("train.augment")) t.augment = detail::parse_bool("train.augment", *v);

	auto& d = cfg.degradation;
	if (const auto v = tree.get_optional<std::string>("degrade.kind")) d.kind = parse_degradation_kind(*v);
	read_key(tree, "degrade.sigma", d.sigma);
	if (const auto v = tree.get_optional<std::string>("degrade.pattern")) d.pattern = parse_bayer_pattern(*v);
	read_key(tree, "degrade.quality", d.quality);
	read_key(tree, "degrade.scale", d.scale);
	read_size(tree, "degrade.seed", d.seed);

	const auto path_key = [&](const char* key, fs::path& target) {
		if (const auto v = tree.get_optional<std::string>(key)) {
			const fs::path p(*v);
			target = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
		}
	};
	path_key("paths.corpus", cfg.paths.corpus_dir);
	path_key("paths.eval", cfg.paths.eval_dir);
	path_key("paths.input", cfg.paths.input);
	path_key("paths.checkpoint", cfg.paths.checkpoint);
	path_key("paths.out", cfg.paths.out_dir);
	return cfg;
}

inline CliConfig load_config(const fs::path& path) {
	std::ifstream is(path);
	if (!is) throw IoError("cannot open config " + path.string());
	return parse_config(is, path.parent_path());
}

}  // namespace rnan

#endif  // RNAN_IO_HPP_
