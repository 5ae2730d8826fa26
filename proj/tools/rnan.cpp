// rnan — command-line front end: degrade, train, infer, eval, gradcheck, params.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "rnan/checkpoint.hpp"
#include "rnan/evaluate.hpp"
#include "rnan/grad_suite.hpp"
#include "rnan/io.hpp"
#include "rnan/train.hpp"

namespace {

using namespace rnan;

struct Flags {
	std::string command;
	std::optional<std::string> config, pattern, kind, input, checkpoint, out;
	std::optional<std::uint64_t> seed;
	std::optional<double> sigma;
	std::optional<int> quality, scale;
	bool self_ensemble = false, y_channel = false;
};

std::size_t threads_from_env() {
	const char* env = std::getenv("RNAN_THREADS");
	if (!env || !*env) return 1;
	char* end = nullptr;
	const long v = std::strtol(env, &end, 10);
	if (*end != '\0' || v < 1 || v > 1024) throw ConfigError(std::string("RNAN_THREADS must be a positive integer, got '") + env + "'");
	return static_cast<std::size_t>(v);
}

// Applies flag overrides and rejects flags that cannot affect the command.
CliConfig resolve(const Flags& f) {
	CliConfig cfg = f.config ? load_config(*f.config) : CliConfig{};
	auto& d = cfg.degradation;
	if (f.kind) d.kind = parse_degradation_kind(*f.kind);
	if (f.seed) {
		cfg.train.seed = *f.seed;
		d.seed = *f.seed;
	}
	if (f.sigma) d.sigma = *f.sigma;
	if (f.quality) d.quality = *f.quality;
	if (f.scale) d.scale = *f.scale;
	if (f.pattern) d.pattern = parse_bayer_pattern(*f.pattern);
	if (f.input) cfg.paths.input = *f.input;
	if (f.checkpoint) cfg.paths.checkpoint = *f.checkpoint;
	if (f.out) cfg.paths.out_dir = *f.out;
	cfg.train.threads = threads_from_env();

	const auto reject = [&](bool given, const char* flag, const char* why) {
		if (given) throw ConfigError(std::string(flag) + " " + why);
	};
	const bool degrades = f.command == "degrade" || f.command == "train" || f.command == "eval";
	const bool any_degradation_flag = f.sigma || f.quality || f.scale || f.pattern || f.kind || f.seed;
	reject(any_degradation_flag && !degrades, "degradation options and --seed", "are not used by this command");
	reject(f.sigma && d.kind != DegradationKind::awgn, "--sigma", "applies only to awgn degradation");
	reject(f.quality && d.kind != DegradationKind::jpeg, "--quality", "applies only to jpeg degradation");
	reject(f.scale && d.kind != DegradationKind::bicubic_sr, "--scale", "applies only to sr degradation");
	reject(f.pattern && d.kind != DegradationKind::mosaic, "--pattern", "applies only to mosaic degradation");
	reject(f.self_ensemble && f.command != "infer" && f.command != "eval", "--self-ensemble", "applies to infer and eval");
	reject(f.y_channel && f.command != "eval" && f.command != "degrade", "--y-channel", "applies to eval and degrade");
	cfg.validate();
	return cfg;
}

fs::path require(const fs::path& p, const char* what) {
	if (p.empty()) throw ConfigError(std::string("no ") + what + " given");
	return p;
}

NamedImages load_nonempty(const fs::path& where) {
	auto imgs = load_images(where, &std::cerr);
	if (imgs.empty()) throw IoError("no readable images in " + where.string());
	return imgs;
}

int cmd_degrade(const CliConfig& cfg, const Flags& f) {
	const auto imgs = load_nonempty(require(cfg.paths.input, "input (--input or [paths] input)"));
	fs::create_directories(cfg.paths.out_dir);
	std::cout << std::fixed << std::setprecision(4);
	double total = 0;
	for (std::size_t i = 0; i < imgs.size(); ++i) {
		const auto& [name, hq] = imgs[i];
		DegradationSpec s = cfg.degradation;
		s.seed = derive_seed(cfg.degradation.seed, i);
		const Tensor4f lq = degrade(hq, s);
		// scored before the 8-bit write clips it
		const double p = f.y_channel ? measure(lq, hq, true).psnr_db : psnr(lq, hq);
		total += p;
		write_image(cfg.paths.out_dir / name, lq);
		std::cout << name << "  PSNR " << p << " dB\n";
	}
	std::cout << "mean PSNR " << total / static_cast<double>(imgs.size()) << " dB over " << imgs.size() << " images ("
			  << to_string(cfg.degradation.kind) << ")\n";
	return 0;
}

int cmd_train(const CliConfig& cfg) {
	const auto imgs = load_nonempty(require(cfg.paths.corpus_dir, "training corpus ([paths] corpus)"));
	Corpus corpus;
	for (const auto& [name, img] : imgs) corpus.push_back({name, convert_channels(img, cfg.network.in_channels)});
	fs::create_directories(cfg.paths.out_dir);
	const fs::path ckpt = cfg.paths.checkpoint.empty() ? cfg.paths.out_dir / "model.rnan" : cfg.paths.checkpoint;
	std::ofstream log(cfg.paths.out_dir / "loss.csv");
	if (!log) throw IoError("cannot write " + (cfg.paths.out_dir / "loss.csv").string());
	TrainOutputs out{&log, &std::cerr, ckpt, 100};
	const auto r = train(corpus, cfg.degradation, cfg.network, cfg.train, out, cfg.init);
	std::cout << "trained " << r.losses.size() << " iterations";
	if (!r.losses.empty()) std::cout << ", final loss " << r.losses.back();
	std::cout << "\ncheckpoint " << ckpt.string() << "\n";
	return 0;
}

int cmd_infer(const CliConfig& cfg, const Flags& f) {
	const auto ck = load_checkpoint(require(cfg.paths.checkpoint, "checkpoint (--checkpoint)"));
	const auto imgs = load_nonempty(require(cfg.paths.input, "input (--input)"));
	fs::create_directories(cfg.paths.out_dir);
	for (const auto& [name, img] : imgs) {
		const auto lq = convert_channels(img, ck.config.in_channels);
		write_image(cfg.paths.out_dir / name, restore(lq, ck.params, ck.config, f.self_ensemble));
		std::cout << name << " -> " << (cfg.paths.out_dir / name).string() << "\n";
	}
	return 0;
}

int cmd_eval(const CliConfig& cfg, const Flags& f) {
	const auto ck = load_checkpoint(require(cfg.paths.checkpoint, "checkpoint (--checkpoint)"));
	const fs::path dir = !cfg.paths.input.empty() ? cfg.paths.input : cfg.paths.eval_dir;
	auto imgs = load_nonempty(require(dir, "evaluation set (--input or [paths] eval)"));
	for (auto& [name, img] : imgs) img = convert_channels(img, ck.config.in_channels);
	const auto s = evaluate(imgs, cfg.degradation, ck.config, ck.params, {f.self_ensemble, f.y_channel});
	fs::create_directories(cfg.paths.out_dir);
	const fs::path csv = cfg.paths.out_dir / "eval.csv";
	std::ofstream os(csv);
	if (!os) throw IoError("cannot write " + csv.string());
	write_eval_csv(os, s);
	std::cout << std::fixed << std::setprecision(4);
	for (const auto& r : s.rows)
		std::cout << r.image << "  PSNR " << r.restored.psnr_db << " dB  SSIM " << r.restored.ssim << "  (input "
				  << r.degraded.psnr_db << " dB)\n";
	std::cout << "mean PSNR " << s.mean.psnr_db << " dB  SSIM " << s.mean.ssim << "  (input " << s.mean_degraded.psnr_db
			  << " dB)\nwrote " << csv.string() << "\n";
	return 0;
}

int cmd_gradcheck() {
	bool ok = true;
	gradsuite::run(5, [&](const gradsuite::SuiteResult& r) {
		ok = ok && r.passed();
		std::cout << (r.passed() ? "PASS " : "FAIL ") << std::left << std::setw(34) << r.name << std::scientific
				  << std::setprecision(2) << " max rel err " << r.worst << "  (" << r.checked << " coords, " << r.kinks
				  << " kinks skipped)\n"
				  << std::flush;
	});
	std::cout << (ok ? "gradient check passed\n" : "gradient check FAILED\n");
	return ok ? 0 : 1;
}

int cmd_params(const CliConfig& cfg) {
	for (const auto& [name, n] : parameter_breakdown(cfg.network)) std::cout << std::left << std::setw(12) << name << n << "\n";
	std::cout << "total " << count_parameters(cfg.network) << "\n";
	return 0;
}

}  // namespace

int main(int argc, char** argv) {
	CLI::App app{"Residual non-local attention networks for image restoration"};
	Flags f;
	app.add_option("command", f.command, "degrade | train | infer | eval | gradcheck | params")
		->required()
		->check(CLI::IsMember({"degrade", "train", "infer", "eval", "gradcheck", "params"}));
	app.add_option("--config", f.config, "INI config file")->check(CLI::ExistingFile);
	app.add_option("--seed", f.seed, "seed for training and degradation");
	app.add_option("--sigma", f.sigma, "AWGN standard deviation on the 0-255 scale");
	app.add_option("--quality", f.quality, "JPEG quality 1-100");
	app.add_option("--scale", f.scale, "super-resolution factor 2-4");
	app.add_option("--pattern", f.pattern, "Bayer pattern: RGGB, BGGR, GRBG or GBRG");
	app.add_option("--kind", f.kind, "degradation: awgn, mosaic, jpeg or sr");
	app.add_option("--input", f.input, "input image or directory");
	app.add_option("--checkpoint", f.checkpoint, "checkpoint file");
	app.add_option("--out", f.out, "output directory");
	app.add_flag("--self-ensemble", f.self_ensemble, "average over the eight flips/rotations");
	app.add_flag("--y-channel", f.y_channel, "score the luma channel only");
	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		return app.exit(e);
	}

	try {
		if (f.command == "gradcheck") {
			if (argc > 2) throw ConfigError("gradcheck takes no options");
			return cmd_gradcheck();
		}
		const CliConfig cfg = resolve(f);
		if (f.command == "degrade") return cmd_degrade(cfg, f);
		if (f.command == "train") return cmd_train(cfg);
		if (f.command == "infer") return cmd_infer(cfg, f);
		if (f.command == "eval") return cmd_eval(cfg, f);
		return cmd_params(cfg);
	} catch (const std::exception& e) {
		std::cerr << "rnan " << f.command << ": error: " << e.what() << "\n";
		return 1;
	}
}
