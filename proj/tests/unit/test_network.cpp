#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mcn/autograd.hpp"
#include "mcn/error.hpp"
#include "mcn/network.hpp"
#include "mcn/ops.hpp"
#include "oracles.hpp"

using namespace mcn;
using oracle::random_tensor;

namespace {

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() && std::ranges::equal(a.data(), b.data());
}

template <typename T>
SgnConfig small_sgn(std::size_t input_parts = 1, std::size_t feature_parts = 1) {
    SgnConfig c;
    c.block_widths = scaled_widths(8);
    c.input_parts = input_parts;
    c.feature_parts = feature_parts;
    return c;
}

}  // namespace

TEST(Fuse, ResidualSumsParts) {
    auto x = random_tensor<float>({1, 4, 8, 8}, 1);
    auto y = random_tensor<float>({1, 4, 8, 8}, 2);
    auto s = fuse<float>({x, y}, {1.0, 1.0}, FusionKind::Residual);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(s.data()[i], x.data()[i] + y.data()[i]);
    auto z = fuse<float>({x, Tensor<float>(x.shape(), 0.0f)}, {1.0, 1.0}, FusionKind::Residual);
    EXPECT_TRUE(bit_equal(z, x));
}

TEST(Fuse, DenseConcatenatesWeightedParts) {
    auto x = random_tensor<float>({1, 4, 8, 8}, 3);
    auto y = random_tensor<float>({1, 4, 8, 8}, 4);
    auto d = fuse<float>({x, y}, {1.0, 0.0}, FusionKind::Dense);
    ASSERT_EQ(d.shape(), (Shape{1, 8, 8, 8}));
    for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(d.data()[i], x.data()[i]);
    for (std::size_t i = 256; i < 512; ++i) EXPECT_EQ(d.data()[i], 0.0f);
}

TEST(Fuse, ShapeMismatchIsDimensionError) {
    auto x = Tensor<float>({1, 4, 8, 8});
    EXPECT_THROW(fuse<float>({x, Tensor<float>({1, 3, 8, 8})}, {1, 1}, FusionKind::Residual), DimensionError);
    EXPECT_THROW(fuse<float>({x, Tensor<float>({1, 4, 4, 8})}, {1, 1}, FusionKind::Dense), DimensionError);
    EXPECT_NO_THROW(fuse<float>({x, Tensor<float>({1, 2, 8, 8})}, {1, 1}, FusionKind::Dense));
    EXPECT_THROW(fuse<float>({x}, {1, 1}, FusionKind::Dense), ParameterError);
}

TEST(Sgn, ShapesAndNineFeatures) {
    Sgn<float> sgn(small_sgn<float>(), "sgn1", 7);
    auto r = sgn_forward<float>(sgn, random_tensor<float>({1, 4, 16, 16}, 5, 0, 1), nullptr, FusionKind::Residual);
    EXPECT_EQ(r.output.shape(), (Shape{1, 3, 32, 32}));
    ASSERT_EQ(r.features.size(), 9u);
    const auto w = scaled_widths(8);
    const std::size_t sizes[9] = {16, 8, 4, 2, 1, 2, 4, 8, 16};
    for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(r.features[j].shape(), (Shape{1, w[j], sizes[j], sizes[j]}));
    EXPECT_EQ(sgn.head().weight.shape(), (Shape{12, 4, 1, 1}));
}

TEST(Sgn, XtransUsesFactorThree) {
    SgnConfig c = small_sgn<float>();
    c.in_channels = 9;
    c.upsample_factor = 3;
    Sgn<float> sgn(c, "sgn1", 1);
    auto r = sgn_forward<float>(sgn, Tensor<float>({1, 9, 16, 32}, 0.1f), nullptr, FusionKind::Residual);
    EXPECT_EQ(r.output.shape(), (Shape{1, 3, 48, 96}));
    EXPECT_EQ(sgn.head().weight.dim(0), 27u);
}

TEST(Sgn, InputErrors) {
    Sgn<float> sgn(small_sgn<float>(), "sgn1", 7);
    EXPECT_THROW(sgn_forward<float>(sgn, Tensor<float>({1, 3, 16, 16}), nullptr, FusionKind::Residual), DimensionError);
    EXPECT_THROW(sgn_forward<float>(sgn, Tensor<float>({1, 4, 12, 16}), nullptr, FusionKind::Residual), DimensionError);
    FeatureInjection<float> inj;
    inj.layers.resize(9);
    inj.layers[2].push_back(Tensor<float>({1, 5, 4, 4}));
    EXPECT_THROW(sgn_forward<float>(sgn, Tensor<float>({1, 4, 16, 16}), &inj, FusionKind::Residual), DimensionError);
    inj.layers.resize(3);
    EXPECT_THROW(sgn_forward<float>(sgn, Tensor<float>({1, 4, 16, 16}), &inj, FusionKind::Residual), DimensionError);
}

TEST(Sgn, ZeroInjectionIsBitExactIdentity) {
    Sgn<float> sgn(small_sgn<float>(), "sgn2", 11);
    auto x = random_tensor<float>({1, 4, 16, 16}, 6, 0, 1);
    auto plain = sgn_forward<float>(sgn, x, nullptr, FusionKind::Residual);
    FeatureInjection<float> inj;
    inj.layers.resize(9);
    for (std::size_t j = 0; j < 9; ++j) {
        inj.layers[j].push_back(Tensor<float>(plain.features[j].shape(), 0.0f));
        inj.layers[j].push_back(Tensor<float>(plain.features[j].shape(), 0.0f));
    }
    auto injected = sgn_forward<float>(sgn, x, &inj, FusionKind::Residual);
    EXPECT_TRUE(bit_equal(plain.output, injected.output));
}

TEST(Sgn, InjectionChangesEveryLaterBlock) {
    Sgn<float> sgn(small_sgn<float>(), "sgn2", 11);
    auto x = random_tensor<float>({1, 4, 16, 16}, 6, 0, 1);
    auto plain = sgn_forward<float>(sgn, x, nullptr, FusionKind::Residual);
    FeatureInjection<float> inj;
    inj.layers.resize(9);
    for (std::size_t j = 0; j < 9; ++j) inj.layers[j].push_back(Tensor<float>(plain.features[j].shape(), 0.0f));
    inj.layers[4][0] = random_tensor<float>(plain.features[4].shape(), 8);
    auto r = sgn_forward<float>(sgn, x, &inj, FusionKind::Residual);
    for (std::size_t j = 0; j <= 4; ++j) EXPECT_TRUE(bit_equal(r.features[j], plain.features[j])) << j;
    for (std::size_t j = 5; j < 9; ++j) EXPECT_FALSE(bit_equal(r.features[j], plain.features[j])) << j;
}

TEST(Sgn, ParameterNamesAndSetter) {
    Sgn<float> sgn(small_sgn<float>(), "sgn1", 3);
    const auto names = sgn.named_parameters();
    // 9 blocks x 2 convs + 4 upsamplers + head, each weight and bias.
    EXPECT_EQ(names.size(), 2u * (18 + 4 + 1));
    EXPECT_EQ(names.front().first, "sgn1.block1.conv1.weight");
    EXPECT_EQ(names.back().first, "sgn1.head.bias");
    EXPECT_THROW(sgn.set_parameter("sgn1.block1.conv1.weight", Tensor<float>({1})), DimensionError);
    EXPECT_THROW(sgn.set_parameter("sgn1.block10.conv1.weight", Tensor<float>({1})), ParameterError);
    sgn.set_parameter("sgn1.head.bias", Tensor<float>({12}, 0.5f));
    EXPECT_EQ(sgn.head().bias.data()[3], 0.5f);
}

TEST(Sgn, InitIsDeterministicAndBounded) {
    Sgn<float> a(small_sgn<float>(), "sgn1", 42), b(small_sgn<float>(), "sgn1", 42), c(small_sgn<float>(), "sgn1", 43);
    const auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_TRUE(bit_equal(pa[i].second, pb[i].second));
        const auto& s = pa[i].second.shape();
        if (s.size() == 4) {
            EXPECT_FALSE(bit_equal(pa[i].second, pc[i].second));
            // conv weights are (out, in, k, k); upsamplers (in, out, k, k)
            const double bound = std::sqrt(6.0 / static_cast<double>((s[0] + s[1]) * s[2] * s[3]));
            for (float v : pa[i].second.data()) ASSERT_LE(std::abs(v), bound);
        } else {
            for (float v : pa[i].second.data()) ASSERT_EQ(v, 0.0f);
        }
    }
}

TEST(Adapter, ShapesZeroAndErrors) {
    McnModel<float> m(McnConfig::make(2, FusionKind::Residual, 8));
    EXPECT_EQ(m.adapter(0).weight.shape(), (Shape{4, 12, 1, 1}));
    EXPECT_EQ(adapt_output(m.adapter(0), random_tensor<float>({1, 3, 32, 32}, 1), 2).shape(), (Shape{1, 4, 16, 16}));
    auto z = adapt_output(m.adapter(0), Tensor<float>({1, 3, 32, 32}, 0.0f), 2);
    for (float v : z.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_THROW(adapt_output(m.adapter(0), Tensor<float>({1, 4, 32, 32}), 2), DimensionError);
}

TEST(Adapter, GradientReachesImage) {
    McnModel<double> m(McnConfig::make(2, FusionKind::Residual, 8));
    const auto& adapter = m.adapter(1);
    auto x = random_tensor<double>({1, 3, 8, 8}, 9, 0, 1);
    const double err = check_gradients<double>(
        [&](const Tensor<double>& in) { return sum(lrelu(adapt_output(adapter, in, 2), 0.2)); }, x, 1e-6);
    EXPECT_LT(err, 1e-6);
}

TEST(Mcn, OutputShapes) {
    for (auto kind : {FusionKind::Residual, FusionKind::Dense}) {
        McnModel<float> m(McnConfig::make(3, kind, 8));
        auto o = mcn_forward(m, random_tensor<float>({1, 4, 16, 16}, 2, 0, 1));
        ASSERT_EQ(o.outputs.size(), 2u);
        EXPECT_EQ(o.plain_output.shape(), (Shape{1, 3, 32, 32}));
        for (const auto& t : o.outputs) EXPECT_EQ(t.shape(), (Shape{1, 3, 32, 32}));
        EXPECT_EQ(o.back_output.shape(), (Shape{1, 3, 32, 32}));
        ASSERT_EQ(o.features.size(), 4u);
        for (const auto& f : o.features) EXPECT_EQ(f.size(), 9u);
    }
    McnModel<float> x(McnConfig::make(2, FusionKind::Residual, 8, CfaKind::XTrans));
    auto o = mcn_forward(x, Tensor<float>({1, 9, 16, 16}, 0.2f));
    EXPECT_EQ(o.back_output.shape(), (Shape{1, 3, 48, 48}));
    EXPECT_THROW(mcn_forward(x, Tensor<float>({1, 4, 16, 16})), DimensionError);
}

TEST(Mcn, ZeroFusionWeightsReduceToIndependentSgns) {
    auto cfg = McnConfig::make(3, FusionKind::Residual, 8, CfaKind::Bayer, 5);
    cfg.fusion.alpha_out.assign(3, 0.0);
    cfg.fusion.beta_coop = 0.0;
    cfg.fusion.beta_back = 0.0;
    McnModel<float> m(cfg);
    auto x = random_tensor<float>({1, 4, 16, 16}, 3, 0, 1);
    auto o = mcn_forward(m, x);
    const auto s1 = sgn_forward<float>(m.sgn(0), x, nullptr, FusionKind::Residual);
    EXPECT_TRUE(bit_equal(o.plain_output, s1.output));
    EXPECT_TRUE(bit_equal(o.back_output, s1.output));
    for (std::size_t i = 1; i < 3; ++i) {
        const auto si = sgn_forward<float>(m.sgn(i), x, nullptr, FusionKind::Residual);
        EXPECT_TRUE(bit_equal(o.outputs[i - 1], si.output)) << i;
    }
}

TEST(Mcn, SiameseSgnOneDrivesBothPasses) {
    McnModel<float> m(McnConfig::make(2, FusionKind::Residual, 8, CfaKind::Bayer, 1));
    auto x = random_tensor<float>({1, 4, 16, 16}, 4, 0, 1);
    const auto before = mcn_forward(m, x);
    auto w = m.sgn(0).conv(3, 1).weight.detach();
    w.mutable_data()[0] += 0.25f;
    m.set_parameter("sgn1.block4.conv2.weight", w);
    const auto after = mcn_forward(m, x);
    EXPECT_FALSE(bit_equal(before.plain_output, after.plain_output));
    EXPECT_FALSE(bit_equal(before.back_output, after.back_output));
    // One storage serves both passes: no separate back-pass parameters exist.
    for (const auto& [name, t] : m.named_parameters()) EXPECT_EQ(name.find("sgn1'"), std::string::npos);
}

TEST(Mcn, DenseBackPassIgnoresInjectedFeaturesAtZeroWeight) {
    McnModel<float> m(McnConfig::make(3, FusionKind::Dense, 8, CfaKind::Bayer, 2));
    ASSERT_EQ(m.config().fusion.beta_back, 0.0);
    auto x = random_tensor<float>({1, 4, 16, 16}, 5, 0, 1);
    const auto o = mcn_forward(m, x);

    // Rebuild the back-pass input from the adapted outputs only.
    std::vector<Tensor<float>> parts;
    parts.push_back(adapt_output(m.adapter(0), o.plain_output, 2));
    parts.push_back(adapt_output(m.adapter(1), o.outputs[0], 2));
    parts.push_back(adapt_output(m.adapter(2), o.outputs[1], 2));
    parts.push_back(x);
    const auto input = concat_channels<float>(parts);

    FeatureInjection<float> junk;
    junk.layers.resize(9);
    junk.weight = 0.0;
    junk.own_first = true;
    for (std::size_t j = 0; j < 9; ++j) {
        for (std::size_t p = 1; p < 3; ++p) junk.layers[j].push_back(random_tensor<float>(o.features[p][j].shape(), 100 + j * 3 + p));
    }
    const auto r = sgn_forward<float>(m.sgn(0), input, &junk, FusionKind::Dense);
    EXPECT_TRUE(bit_equal(r.output, o.back_output));
}

TEST(Mcn, DenseWidensFirstConvolutions) {
    McnModel<float> m(McnConfig::make(3, FusionKind::Dense, 8));
    const auto w = scaled_widths(8);
    EXPECT_EQ(m.sgn(0).conv(0, 0).weight.dim(1), 16u);  // three adapted outputs + raw input
    EXPECT_EQ(m.sgn(1).conv(0, 0).weight.dim(1), 8u);
    EXPECT_EQ(m.sgn(2).conv(0, 0).weight.dim(1), 12u);
    EXPECT_EQ(m.sgn(0).conv(1, 0).weight.dim(1), 3 * w[0]);
    EXPECT_EQ(m.sgn(1).conv(1, 0).weight.dim(1), 2 * w[0]);
    EXPECT_EQ(m.sgn(2).conv(5, 0).weight.dim(1), w[5] + 3 * w[3]);
    EXPECT_EQ(m.sgn(2).head().weight.dim(1), 3 * w[8]);
}

TEST(Mcn, ForwardIsDeterministic) {
    for (auto kind : {FusionKind::Residual, FusionKind::Dense}) {
        auto x = random_tensor<float>({2, 4, 16, 16}, 6, 0, 1);
        McnModel<float> a(McnConfig::make(3, kind, 8, CfaKind::Bayer, 9));
        McnModel<float> b(McnConfig::make(3, kind, 8, CfaKind::Bayer, 9));
        const auto oa = mcn_forward(a, x), ob = mcn_forward(b, x), oa2 = mcn_forward(a, x);
        EXPECT_TRUE(bit_equal(oa.back_output, ob.back_output));
        EXPECT_TRUE(bit_equal(oa.back_output, oa2.back_output));
        for (std::size_t i = 0; i < oa.outputs.size(); ++i) EXPECT_TRUE(bit_equal(oa.outputs[i], ob.outputs[i]));
    }
}

TEST(Mcn, BackConnectionAddsNoParameters) {
    for (auto kind : {FusionKind::Residual, FusionKind::Dense}) {
        auto with = McnConfig::make(3, kind, 4);
        auto without = with;
        without.back_connection = false;
        EXPECT_EQ(count_params(McnModel<float>(with)), count_params(McnModel<float>(without)));
        auto o = mcn_forward(McnModel<float>(without), Tensor<float>({1, 4, 16, 16}, 0.3f));
        EXPECT_TRUE(bit_equal(o.back_output, o.plain_output));
    }
}

TEST(Mcn, DenseHasMoreParametersThanResidual) {
    EXPECT_GT(count_params(McnModel<float>(McnConfig::make(3, FusionKind::Dense, 4))),
              count_params(McnModel<float>(McnConfig::make(3, FusionKind::Residual, 4))));
}

TEST(Mcn, CountMatchesClosedForm) {
    // One residual SGN at divisor 8 counted by hand from the layer list.
    const auto w = scaled_widths(8);
    std::size_t expected = 0;
    auto conv = [&](std::size_t cin, std::size_t cout, std::size_t k) { expected += cin * cout * k * k + cout; };
    for (std::size_t b = 0; b < 9; ++b) {
        std::size_t cin = b == 0 ? 4 : w[b - 1];
        if (b >= 5) {
            conv(w[b - 1], w[b], 2);
            cin = w[b] + w[8 - b];
        }
        conv(cin, w[b], 3);
        conv(w[b], w[b], 3);
    }
    conv(w[8], 12, 1);
    Sgn<float> sgn(small_sgn<float>(), "sgn1", 0);
    EXPECT_EQ(count_params(sgn), expected);
    McnModel<float> m(McnConfig::make(1, FusionKind::Residual, 8));
    EXPECT_EQ(count_params(m), expected + 12 * 4 + 4);
}

TEST(Mcn, CheckpointRoundTripAndConfigInference) {
    for (auto kind : {FusionKind::Residual, FusionKind::Dense}) {
        for (auto cfa : {CfaKind::Bayer, CfaKind::XTrans}) {
            McnModel<float> m(McnConfig::make(3, kind, 8, cfa, 17));
            const auto ckpt = m.to_checkpoint();
            const auto cfg = config_from_checkpoint(ckpt);
            EXPECT_EQ(cfg.num_sgns, 3u);
            EXPECT_EQ(cfg.fusion.kind, kind);
            EXPECT_EQ(cfg.cfa, cfa);
            EXPECT_EQ(cfg.widths, scaled_widths(8));
            McnModel<float> n(cfg);
            n.load(ckpt);
            const auto pm = m.named_parameters(), pn = n.named_parameters();
            ASSERT_EQ(pm.size(), pn.size());
            for (std::size_t i = 0; i < pm.size(); ++i) {
                EXPECT_EQ(pm[i].first, pn[i].first);
                EXPECT_TRUE(bit_equal(pm[i].second, pn[i].second));
            }
        }
    }
    Checkpoint empty;
    EXPECT_THROW(config_from_checkpoint(empty), FormatError);
    McnModel<float> small(McnConfig::make(2, FusionKind::Residual, 8));
    McnModel<float> wide(McnConfig::make(2, FusionKind::Residual, 4));
    EXPECT_THROW(small.load(wide.to_checkpoint()), FormatError);
}

TEST(Mcn, ConfigValidation) {
    auto c = McnConfig::make(3, FusionKind::Residual, 8);
    c.fusion.alpha_out.pop_back();
    EXPECT_THROW(McnModel<float>{c}, ParameterError);
    EXPECT_THROW(scaled_widths(0), ParameterError);
    EXPECT_THROW(parse_fusion("sum"), ParameterError);
    EXPECT_EQ(parse_fusion("dmcn"), FusionKind::Dense);
    const auto r = FusionSpec::defaults(FusionKind::Residual, 3);
    EXPECT_EQ(r.beta_back, 1.0);
    const auto d = FusionSpec::defaults(FusionKind::Dense, 3);
    EXPECT_EQ(d.beta_back, 0.0);
    EXPECT_EQ(d.beta_coop, 1.0);
}
