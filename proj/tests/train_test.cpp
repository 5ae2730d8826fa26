#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "rnan/evaluate.hpp"
#include "rnan/synthetic.hpp"
#include "rnan/train.hpp"

namespace rnan {
namespace {

using oracle::random_tensor;

// A store with one scalar parameter, for optimiser tests.
ParamStore<double> scalar_store(double v) {
	ParamStore<double> s;
	Tensor4d t({1, 1, 1, 1});
	t[0] = v;
	s.add("theta", t);
	return s;
}

Gradients<double> scalar_grad(const ParamStore<double>& s, double g) {
	Gradients<double> out(s);
	out[0][0] = g;
	return out;
}

Corpus small_corpus(std::size_t n = 3, std::size_t size = 40) {
	Corpus c;
	for (std::size_t i = 0; i < n; ++i) c.push_back({"img" + std::to_string(i), synthetic_image(size, size + 4, 3, 100 + i)});
	return c;
}

TEST(LearningRate, HalvesOnSchedule) {
	TrainConfig cfg;
	EXPECT_DOUBLE_EQ(lr_at(cfg, 0), 1e-4);
	EXPECT_DOUBLE_EQ(lr_at(cfg, 199'999), 1e-4);
	EXPECT_DOUBLE_EQ(lr_at(cfg, 200'000), 5e-5);
	EXPECT_DOUBLE_EQ(lr_at(cfg, 400'000), 2.5e-5);
	EXPECT_DOUBLE_EQ(lr_at(cfg, 650'000), 1.25e-5);
}

TEST(L2Loss, MatchesDirectSum) {
	const auto p = random_tensor<double>({2, 3, 4, 5}, 1), t = random_tensor<double>({2, 3, 4, 5}, 2);
	const auto lg = l2_loss(p, t);
	double sum = 0;
	for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] - t[i]) * (p[i] - t[i]);
	EXPECT_NEAR(lg.loss, sum / 120.0, 1e-14);
	for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(lg.grad[i], 2 * (p[i] - t[i]) / 120.0, 1e-15);
	EXPECT_EQ(l2_loss(p, p).loss, 0.0);
	EXPECT_THROW(l2_loss(p, random_tensor<double>({1, 3, 4, 5}, 3)), ConfigError);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
	auto s = scalar_store(1.0);
	TrainConfig cfg;
	adam_step(s, scalar_grad(s, 0.37), 1e-3, cfg);
	// bias correction makes the first update lr·g/(|g| + eps)
	EXPECT_NEAR(s.value("theta")[0], 1.0 - 1e-3, 1e-10);
	EXPECT_EQ(s.step(), 1u);
	adam_step(s, scalar_grad(s, -5.0), 1e-3, cfg);
	EXPECT_EQ(s.step(), 2u);
}

TEST(AdamStep, MinimisesQuadratic) {
	auto s = scalar_store(0.0);
	TrainConfig cfg;
	for (int i = 0; i < 500; ++i) {
		const double th = s.value("theta")[0];
		adam_step(s, scalar_grad(s, 2 * (th - 3)), 0.1, cfg);
	}
	EXPECT_NEAR(s.value("theta")[0], 3.0, 1e-2);
}

TEST(AdamStep, RejectsMismatchedGradients) {
	auto s = scalar_store(0.0);
	Gradients<double> empty;
	EXPECT_THROW(adam_step(s, empty, 1e-3, TrainConfig{}), ConfigError);
}

TEST(SamplePatches, DeterministicAndInBounds) {
	const auto corpus = small_corpus();
	DegradationSpec spec;
	auto cfg = TrainConfig::desk();
	const auto a = sample_patches(corpus, spec, cfg, 7), b = sample_patches(corpus, spec, cfg, 7);
	const auto c = sample_patches(corpus, spec, cfg, 8);
	ASSERT_EQ(a.size(), cfg.batch_size);
	bool any_differs = false;
	for (std::size_t i = 0; i < a.size(); ++i) {
		EXPECT_EQ(a[i].hq, b[i].hq);
		EXPECT_EQ(a[i].lq, b[i].lq);
		EXPECT_EQ(a[i].hq.shape(), (Shape{1, 3, 32, 32}));
		EXPECT_LE(a[i].top + 32, corpus[a[i].image].hq.h());
		EXPECT_LE(a[i].left + 32, corpus[a[i].image].hq.w());
		any_differs |= !(a[i].hq == c[i].hq);
	}
	EXPECT_TRUE(any_differs);
}

TEST(SamplePatches, ZeroNoiseKeepsPairsAligned) {
	const auto corpus = small_corpus();
	DegradationSpec spec;
	spec.sigma = 0;
	const auto batch = sample_patches(corpus, spec, TrainConfig::desk(), 3);
	for (const auto& p : batch) {
		EXPECT_EQ(p.lq, p.hq);
		// undo the augmentation and compare against the source crop
		const auto back = dihedral_inverse(p.hq, p.transform);
		const auto& src = corpus[p.image].hq;
		for (std::size_t c = 0; c < 3; ++c)
			for (std::size_t y = 0; y < 32; y += 7)
				for (std::size_t x = 0; x < 32; x += 5) EXPECT_EQ(back(0, c, y, x), src(0, c, p.top + y, p.left + x));
	}
}

TEST(SamplePatches, StoredLowQualityIsCroppedIdentically) {
	auto corpus = small_corpus(1);
	Tensor4f lq = corpus[0].hq;
	for (auto& v : lq.values()) v = 1 - v;
	corpus[0].lq = lq;
	for (const auto& p : sample_patches(corpus, DegradationSpec{}, TrainConfig::desk(), 11)) {
		for (std::size_t i = 0; i < p.hq.size(); ++i) EXPECT_FLOAT_EQ(p.lq[i], 1 - p.hq[i]);
	}
}

TEST(SamplePatches, SkipsUndersizedAndRejectsEmpty) {
	Corpus corpus = small_corpus(2);
	corpus.push_back({"small", synthetic_image(20, 20, 3, 5)});
	std::ostringstream warn;
	EXPECT_EQ(usable_images(corpus, 32, &warn).size(), 2u);
	EXPECT_NE(warn.str().find("small"), std::string::npos);
	EXPECT_THROW(usable_images(Corpus{}, 32), ConfigError);
	EXPECT_THROW(usable_images(Corpus{{"s", synthetic_image(8, 8, 3, 1)}}, 32), ConfigError);
}

TEST(Train, ZeroIterationsReturnsInitialParameters) {
	const auto cfg = NetworkConfig::tiny();
	auto tc = TrainConfig::desk();
	tc.max_iters = 0;
	const auto init = Rnan(cfg).init_params<float>(tc.seed);
	std::ostringstream log;
	const auto r = train(small_corpus(), DegradationSpec{}, cfg, tc, TrainOutputs{&log});
	EXPECT_EQ(r.params, init);
	EXPECT_TRUE(r.losses.empty());
	EXPECT_EQ(log.str(), "iter,lr,loss\n");
}

NetworkConfig small_net() {
	auto cfg = NetworkConfig::tiny();
	cfg.block.features = 8;
	cfg.block.nlb_channels = 4;
	return cfg;
}

TEST(Train, DeterministicAcrossRunsAndThreadCounts) {
	auto tc = TrainConfig::desk();
	tc.batch_size = 3;
	tc.patch_size = 16;
	tc.max_iters = 4;
	tc.lr0 = 1e-3;
	const auto corpus = small_corpus();
	const auto a = train(corpus, DegradationSpec{}, small_net(), tc);
	const auto b = train(corpus, DegradationSpec{}, small_net(), tc);
	tc.threads = 2;
	const auto c = train(corpus, DegradationSpec{}, small_net(), tc);
	EXPECT_EQ(a.params, b.params);
	EXPECT_EQ(a.losses, b.losses);
	EXPECT_EQ(a.params, c.params);
	EXPECT_EQ(a.losses, c.losses);
	EXPECT_EQ(a.params.step(), 4u);
}

TEST(Train, LossDecreasesOnAFixedPair) {
	auto corpus = small_corpus(1, 16);
	Tensor4f lq = corpus[0].hq;
	CounterRng rng(3);
	for (auto& v : lq.values()) v += static_cast<float>(rng.normal() * 0.1);
	corpus[0].lq = lq;
	auto tc = TrainConfig::desk();
	tc.batch_size = 1;
	tc.patch_size = 16;
	tc.augment = false;
	tc.lr0 = 1e-3;
	tc.max_iters = 60;
	const auto r = train(corpus, DegradationSpec{}, small_net(), tc);
	EXPECT_LT(r.losses.back(), 0.5 * r.losses.front());
}

TEST(Train, RejectsChannelMismatch) {
	auto tc = TrainConfig::desk();
	tc.max_iters = 1;
	EXPECT_THROW(train(small_corpus(), DegradationSpec{}, NetworkConfig::tiny(1), tc), ConfigError);
}

TEST(Dihedral, InverseRoundTripsAllEight) {
	const auto t = random_tensor<double>({1, 2, 3, 5}, 4);
	for (unsigned k = 0; k < 8; ++k) {
		const auto d = dihedral(t, k);
		if (k % 2) EXPECT_EQ(d.shape(), (Shape{1, 2, 5, 3}));
		EXPECT_EQ(dihedral_inverse(d, k), t) << k;
	}
	// the eight views are distinct
	for (unsigned i = 0; i < 8; ++i)
		for (unsigned j = i + 1; j < 8; ++j) EXPECT_FALSE(dihedral(t, i).shape() == dihedral(t, j).shape() &&
														  dihedral(t, i) == dihedral(t, j));
}

TEST(SelfEnsemble, ZeroNetworkIsIdentity) {
	const auto cfg = NetworkConfig::tiny();
	const auto store = Rnan(cfg).init_params<double>(1, InitMode::zero);
	const auto img = random_tensor<double>({1, 3, 9, 7}, 5, 0.0, 1.0);
	EXPECT_LT(max_abs_diff(self_ensemble_infer(img, store, cfg), img), 1e-15);
}

TEST(SelfEnsemble, IsMeanOfTheEightViews) {
	const auto cfg = small_net();
	const Rnan net(cfg);
	const auto store = net.init_params<double>(6);
	const auto img = random_tensor<double>({1, 3, 8, 6}, 7, 0.0, 1.0);
	Tensor4d mean(img.shape());
	for (unsigned k = 0; k < 8; ++k) {
		const auto v = dihedral_inverse(net.forward(dihedral(img, k), store), k);
		for (std::size_t i = 0; i < v.size(); ++i) mean[i] += v[i] / 8;
	}
	EXPECT_LT(max_abs_diff(self_ensemble_infer(img, store, cfg), mean), 1e-12);
}

TEST(Evaluate, ZeroNetworkScoresTheDegradedInput) {
	const auto cfg = NetworkConfig::tiny();
	const auto store = Rnan(cfg).init_params<float>(1, InitMode::zero);
	std::vector<std::pair<std::string, Tensor4f>> imgs{{"a", synthetic_image(24, 24, 3, 1)},
													   {"b", synthetic_image(20, 28, 3, 2)}};
	DegradationSpec spec;
	spec.sigma = 15;
	const auto s = evaluate(imgs, spec, cfg, store);
	ASSERT_EQ(s.rows.size(), 2u);
	for (const auto& r : s.rows) {
		EXPECT_DOUBLE_EQ(r.restored.psnr_db, r.degraded.psnr_db);
		EXPECT_NEAR(r.restored.psnr_db, 24.6, 0.6);
	}
	EXPECT_DOUBLE_EQ(s.mean.psnr_db, (s.rows[0].restored.psnr_db + s.rows[1].restored.psnr_db) / 2);
	std::ostringstream csv;
	write_eval_csv(csv, s);
	EXPECT_EQ(csv.str().rfind("image,psnr_db,ssim\na,", 0), 0u);
	EXPECT_NE(csv.str().find("\nmean,"), std::string::npos);
}

TEST(Evaluate, SuperResolutionCropsBorder) {
	const auto cfg = NetworkConfig::tiny();
	const auto store = Rnan(cfg).init_params<float>(1, InitMode::zero);
	DegradationSpec spec;
	spec.kind = DegradationKind::bicubic_sr;
	spec.scale = 3;
	const Tensor4f img = synthetic_image(30, 30, 3, 9);
	const auto s = evaluate({{"x", img}}, spec, cfg, store);
	const auto expected = measure(degrade(img, spec), img, false, 3);
	EXPECT_DOUBLE_EQ(s.rows[0].restored.psnr_db, expected.psnr_db);
}

}  // namespace
}  // namespace rnan
