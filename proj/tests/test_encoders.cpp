#include <gtest/gtest.h>

#include <cmath>

#include "reprompt/cohort.hpp"
#include "reprompt/encoders.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace reprompt;
using namespace reprompt::encoders;
using numerics::Tensor;
namespace rt = reprompt::testing;

namespace {

EncoderConfig tiny_config(EncoderKind kind) {
    EncoderConfig c;
    c.kind = kind;
    c.d_enc = 6;
    c.prompt_len = 2;
    c.d_model = 4;
    return c;
}

cohort::Patient three_visit_patient() {
    return rt::patient("p", {rt::visit({0, 3}, {1}, {2}), rt::visit({5}, {0, 4}, {}), rt::visit({1, 2}, {}, {6})});
}

Tensor scalar_loss(const Tensor& s, const Tensor& r) { return numerics::sum(numerics::mul(s, r)); }

}  // namespace

TEST(EmbedVisits, SingleCodeIsTableRow) {
    numerics::Rng rng(0);
    const auto tables = CodeEmbeddings::init(rt::tiny_vocabulary(), 5, 1.0, rng);
    const auto p = rt::patient("p", {rt::visit({3}), rt::visit({1})});
    const auto embs = embed_visits(p, 1, tables, false);
    ASSERT_EQ(embs.size(), 1u);
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(embs[0][c], tables.dx.at(3, c));
}

TEST(EmbedVisits, SumIsOrderIndependentAndSpansModalities) {
    numerics::Rng rng(1);
    const auto tables = CodeEmbeddings::init(rt::tiny_vocabulary(), 4, 1.0, rng);
    auto v = rt::visit({2, 5}, {1}, {7});
    const auto p = rt::patient("p", {v, v});
    const auto e = embed_visits(p, 2, tables, false);
    for (std::size_t c = 0; c < 4; ++c) {
        const double expected = tables.dx.at(2, c) + tables.dx.at(5, c) + tables.rx.at(1, c) + tables.px.at(7, c);
        EXPECT_NEAR(e[0][c], expected, 1e-15);
        EXPECT_EQ(e[0][c], e[1][c]);
    }
    const auto no_rx = embed_visits(p, 1, tables, true);
    for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_NEAR(no_rx[0][c], tables.dx.at(2, c) + tables.dx.at(5, c) + tables.px.at(7, c), 1e-15);
    }
}

TEST(EmbedVisits, ZeroTablesGiveZeroEmbeddings) {
    const auto vocab = rt::tiny_vocabulary();
    CodeEmbeddings tables{Tensor::zeros({8, 3}, true), Tensor::zeros({8, 3}, true), Tensor::zeros({8, 3}, true)};
    for (const auto& e : embed_visits(three_visit_patient(), 3, tables, false)) {
        for (double x : e.data()) EXPECT_EQ(x, 0.0);
    }
}

TEST(EmbedVisits, Errors) {
    numerics::Rng rng(2);
    const auto tables = CodeEmbeddings::init(rt::tiny_vocabulary(4), 3, 1.0, rng);
    const auto bad = rt::patient("p", {rt::visit({9}), rt::visit({1})});
    EXPECT_THROW(embed_visits(bad, 1, tables, false), numerics::DimensionError);
    EXPECT_THROW(embed_visits(bad, 3, tables, false), DataError);
}

TEST(Retain, SingleVisitHasUnitAlpha) {
    numerics::Rng rng(3);
    RetainEncoder enc(tiny_config(EncoderKind::retain), rt::tiny_vocabulary(), rng);
    const auto out = enc.encode(three_visit_patient(), 1);
    ASSERT_EQ(out.alphas.size(), 1u);
    EXPECT_EQ(out.alphas[0], 1.0);
}

TEST(Retain, ZeroBetaWeightsCollapseContextToBias) {
    numerics::Rng rng(4);
    RetainEncoder enc(tiny_config(EncoderKind::retain), rt::tiny_vocabulary(), rng);
    enc.params().w_beta = Tensor::zeros({6, 6}, true);
    enc.params().b_beta = Tensor::zeros({6}, true);
    enc.params().b_enc = rt::projection_weights({8}, 9).clone_leaf(true);
    const auto patient = three_visit_patient();
    const auto att = enc.attention(patient, 3);
    for (double b : att.betas.data()) EXPECT_EQ(b, 0.0);
    const auto s = enc.encode(patient, 3).prompt;
    ASSERT_EQ(s.shape(), (numerics::Shape{2, 4}));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(s[i], enc.params().b_enc[i]);
}

TEST(Retain, SingleVisitContextIsBetaTimesEmbedding) {
    numerics::Rng rng(5);
    RetainEncoder enc(tiny_config(EncoderKind::retain), rt::tiny_vocabulary(), rng);
    const auto patient = three_visit_patient();
    const auto embs = embed_visits(patient, 1, enc.embeddings(), false);
    const auto att = enc.attention(patient, 1);
    const auto k = retain_context(embs, att);
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(k[c], att.betas.at(0, c) * embs[0][c], 1e-15);
}

// One-unit GRUs with hand-set weights: alpha is checked against a scalar recurrence written out by hand.
TEST(Retain, AlphaMatchesHandComputation) {
    RetainParams p;
    p.gru_alpha = numerics::GRUParams::zeros(1, 1);
    p.gru_beta = numerics::GRUParams::zeros(1, 1);
    auto set = [](Tensor& t, double v) { t.mutable_data()[0] = v; };
    set(p.gru_alpha.w_ir, 0.5);
    set(p.gru_alpha.w_iz, -0.3);
    set(p.gru_alpha.w_in, 0.8);
    set(p.gru_alpha.w_hr, 0.2);
    set(p.gru_alpha.w_hz, 0.4);
    set(p.gru_alpha.w_hn, -0.6);
    set(p.gru_alpha.b_in, 0.1);
    p.w_alpha = Tensor({1, 1}, {1.5}, true);
    p.b_alpha = Tensor({1}, {0.25}, true);
    p.w_beta = Tensor::zeros({1, 1}, true);
    p.b_beta = Tensor::zeros({1}, true);
    const std::vector<double> xs = {1.0, -2.0, 0.5};
    std::vector<Tensor> embs;
    for (double x : xs) embs.push_back(Tensor::vector({x}));

    auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    double h = 0.0;
    std::vector<double> e;
    for (double x : xs) {
        const double r = sig(0.5 * x + 0.2 * h);
        const double z = sig(-0.3 * x + 0.4 * h);
        const double n = std::tanh(0.8 * x + 0.1 + r * (-0.6 * h));
        h = (1 - z) * n + z * h;
        e.push_back(1.5 * h + 0.25);
    }
    const double denom = std::exp(e[0]) + std::exp(e[1]) + std::exp(e[2]);
    const auto att = retain_attention(embs, p);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(att.alphas[j], std::exp(e[j]) / denom, 1e-14);
}

TEST(Retain, EmptySequenceRejected) {
    RetainParams p;
    EXPECT_THROW(retain_attention({}, p), DataError);
}

TEST(Retain, AttentionLawsOnGeneratedCohort) {
    cohort::GeneratorConfig gc;
    gc.n_patients = 200;
    const auto c = cohort::generate_cohort(gc);
    numerics::Rng rng(6);
    EncoderConfig cfg;
    RetainEncoder enc(cfg, c.vocabulary, rng);
    numerics::NoGradGuard no_grad;
    for (const auto& p : c.patients) {
        for (std::size_t t = 1; t <= p.visits.size(); ++t) {
            const auto att = enc.attention(p, t);
            double total = 0;
            for (double a : att.alphas.data()) {
                EXPECT_GT(a, 0.0);
                total += a;
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
            for (double b : att.betas.data()) EXPECT_LT(std::abs(b), 1.0);
        }
    }
}

TEST(Retain, VisitOrderChangesPrompt) {
    numerics::Rng rng(7);
    RetainEncoder enc(tiny_config(EncoderKind::retain), rt::tiny_vocabulary(), rng);
    auto p = three_visit_patient();
    const auto a = enc.encode(p, 3).prompt.to_vector();
    std::swap(p.visits[0], p.visits[2]);
    const auto b = enc.encode(p, 3).prompt.to_vector();
    EXPECT_NE(a, b);
}

TEST(Retain, ReverseTimeFlagChangesAttention) {
    auto cfg = tiny_config(EncoderKind::retain);
    numerics::Rng r1(8), r2(8);
    RetainEncoder fwd(cfg, rt::tiny_vocabulary(), r1);
    cfg.reverse_time = true;
    RetainEncoder rev(cfg, rt::tiny_vocabulary(), r2);
    const auto p = three_visit_patient();
    EXPECT_NE(fwd.encode(p, 3).alphas, rev.encode(p, 3).alphas);
    EXPECT_EQ(fwd.encode(p, 1).prompt.to_vector(), rev.encode(p, 1).prompt.to_vector());
}

class EncoderGradient : public ::testing::TestWithParam<std::tuple<EncoderKind, bool>> {};

TEST_P(EncoderGradient, AllParametersMatchFiniteDifferences) {
    auto cfg = tiny_config(std::get<0>(GetParam()));
    cfg.reverse_time = std::get<1>(GetParam());
    numerics::Rng rng(11);
    const auto enc = make_encoder(cfg, rt::tiny_vocabulary(), rng);
    const auto p = three_visit_patient();
    const Tensor r = rt::projection_weights({2, 4}, 12);
    const auto result = rt::grad_check([&] { return scalar_loss(enc->encode(p, 3).prompt, r); }, enc->named_parameters());
    EXPECT_LT(result.max_rel_error, 1e-4) << result.worst;
    EXPECT_GT(result.checked, 100u);
}

INSTANTIATE_TEST_SUITE_P(Kinds, EncoderGradient,
                         ::testing::Values(std::make_tuple(EncoderKind::retain, false),
                                           std::make_tuple(EncoderKind::retain, true),
                                           std::make_tuple(EncoderKind::lstm, false),
                                           std::make_tuple(EncoderKind::transformer, false)));

TEST(Transformer, SingleVisitPoolingIsIdentity) {
    // With one position the mean over positions equals that position, so the prompt equals a direct
    // recomputation of the single-row layer.
    numerics::Rng rng(13);
    auto cfg = tiny_config(EncoderKind::transformer);
    TransformerEncoder enc(cfg, rt::tiny_vocabulary(), rng);
    const auto p = three_visit_patient();
    const auto s1 = enc.encode(p, 1).prompt.to_vector();
    auto only_first = rt::patient("q", {p.visits[0]});
    EXPECT_EQ(s1, enc.encode(only_first, 1).prompt.to_vector());
}

TEST(AlternateEncoders, ZeroProjectionGivesBias) {
    numerics::Rng rng(14);
    for (auto kind : {EncoderKind::lstm, EncoderKind::transformer}) {
        auto cfg = tiny_config(kind);
        auto enc = make_encoder(cfg, rt::tiny_vocabulary(), rng);
        Tensor* w = nullptr;
        Tensor* b = nullptr;
        if (auto* l = dynamic_cast<LstmEncoder*>(enc.get())) {
            w = &l->w_out();
            b = &l->b_out();
        } else if (auto* t = dynamic_cast<TransformerEncoder*>(enc.get())) {
            w = &t->w_out();
            b = &t->b_out();
        }
        ASSERT_NE(w, nullptr);
        for (double& x : w->mutable_data()) x = 0.0;
        for (std::size_t i = 0; i < b->size(); ++i) b->mutable_data()[i] = static_cast<double>(i) * 0.1;
        const auto s = enc->encode(three_visit_patient(), 3).prompt;
        for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i], (*b)[i]) << to_string(kind);
    }
}

TEST(Encoders, ParametersAreTrainableAndNamedUniquely) {
    numerics::Rng rng(15);
    for (auto kind : {EncoderKind::retain, EncoderKind::lstm, EncoderKind::transformer}) {
        auto cfg = tiny_config(kind);
        cfg.exclude_medications = true;
        const auto enc = make_encoder(cfg, rt::tiny_vocabulary(), rng);
        std::set<std::string> names;
        for (const auto& [name, t] : enc->named_parameters()) {
            EXPECT_TRUE(t.requires_grad()) << name;
            EXPECT_TRUE(names.insert(name).second) << name;
        }
        EXPECT_FALSE(names.count("embed.rx"));
    }
}

TEST(Encoders, ConfigErrors) {
    EXPECT_THROW(parse_encoder("gru"), ConfigError);
    auto cfg = tiny_config(EncoderKind::transformer);
    cfg.transformer_heads = 4;
    numerics::Rng rng(0);
    EXPECT_THROW(make_encoder(cfg, rt::tiny_vocabulary(), rng), ConfigError);
}
