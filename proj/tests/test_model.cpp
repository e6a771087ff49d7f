#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "reprompt/model.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny_model.hpp"

using namespace reprompt;
using namespace reprompt::model;
using numerics::Tensor;
namespace rt = reprompt::testing;

namespace {

std::set<std::string> names_of(const numerics::NamedTensors& ts) {
    std::set<std::string> out;
    for (const auto& [n, t] : ts) out.insert(n);
    return out;
}

double logit_of(const RePrompT& m, const cohort::Patient& p) {
    numerics::NoGradGuard no_grad;
    return m.forward_patient(p).logits[0];
}

}  // namespace

TEST(EndToEnd, EveryTrainableScalarMatchesFiniteDifferences) {
    const auto cfg = rt::tiny_model_config();
    const auto m = rt::tiny_model(cfg, 1);
    const auto p = rt::tiny_cohort().patients[0];
    ASSERT_EQ(p.visits.size(), 2u);
    ASSERT_EQ(m->summary_ids(p, 2).size(), 5u);
    const auto res = rt::grad_check([&] { return m->loss(p); }, m->trainable_parameters());
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(EndToEnd, RecurrenceGradientThroughThreeVisits) {
    const auto cfg = rt::tiny_model_config();
    const auto m = rt::tiny_model(cfg, 2);
    const auto p = rt::tiny_cohort().patients[2];
    ASSERT_EQ(p.visits.size(), 3u);
    Tensor& w_t = m->w_t();
    Tensor& b_t = m->b_t();
    const auto res = rt::grad_check([&] { return m->loss(p); }, {{"w_t", w_t}, {"b_t", b_t}});
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(Partition, TrainableSetIsEncoderRecurrenceAndHead) {
    const auto m = rt::tiny_model(rt::tiny_model_config());
    auto expected = names_of(m->encoder()->named_parameters());
    expected.insert({"recur.w_t", "recur.b_t", "head.w_out", "head.b_out"});
    EXPECT_EQ(names_of(m->trainable_parameters()), expected);
    for (const auto& [name, t] : m->trainable_parameters()) EXPECT_TRUE(t.requires_grad()) << name;
    for (const auto& [name, t] : m->frozen_parameters()) {
        EXPECT_FALSE(t.requires_grad()) << name;
        EXPECT_EQ(name.rfind("lm.", 0), 0u) << name;
        for (const auto& [tn, tt] : m->trainable_parameters()) EXPECT_FALSE(t.same_storage(tt)) << name << " vs " << tn;
    }
}

TEST(Partition, AblatedModulesBecomeConstantPrompts) {
    auto cfg = rt::tiny_model_config();
    cfg.state_recurrent = false;
    cfg.struct_encoded = false;
    const auto m = rt::tiny_model(cfg);
    EXPECT_EQ(names_of(m->trainable_parameters()),
              (std::set<std::string>{"const.state_prompt", "const.struct_prompt", "head.w_out", "head.b_out"}));
}

TEST(Recur, ZeroPooledStateGivesBias) {
    const auto m = rt::tiny_model(rt::tiny_model_config());
    const Tensor g = m->recur(Tensor::zeros({8}));
    ASSERT_EQ(g.shape(), (numerics::Shape{2, 8}));
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(g[i], m->b_t()[i]);
    EXPECT_THROW(m->recur(Tensor::zeros({7})), numerics::DimensionError);
}

TEST(Recur, IdentityMapWithSinglePrompt) {
    auto cfg = rt::tiny_model_config();
    cfg.prompt_len = 1;
    auto m = rt::tiny_model(cfg);
    auto w = m->w_t().mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < 8; ++i) w[i * 8 + i] = 1.0;
    auto b = m->b_t().mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
    const Tensor pooled = Tensor::vector({1, -2, 3, -4, 5, -6, 7, -8});
    EXPECT_EQ(m->recur(pooled).to_vector(), pooled.to_vector());
}

TEST(Recur, AblatedStateIsConstantAcrossVisits) {
    auto cfg = rt::tiny_model_config();
    cfg.state_recurrent = false;
    const auto m = rt::tiny_model(cfg);
    const Tensor a = m->recur(Tensor::zeros({8}));
    const Tensor b = m->recur(Tensor::full({8}, 3.0));
    EXPECT_EQ(a.to_vector(), b.to_vector());
    const auto out = m->forward_patient(rt::tiny_cohort().patients[2], true);
    ASSERT_EQ(out.trace.visits.size(), 3u);
    EXPECT_EQ(out.trace.visits[0].state_prompt_norm, out.trace.visits[2].state_prompt_norm);
}

TEST(AssemblePrompt, OrderAndShapes) {
    const auto m = rt::tiny_model(rt::tiny_model_config());
    const Tensor g = Tensor::full({2, 8}, 1.0);
    const Tensor s = Tensor::full({2, 8}, 2.0);
    const Tensor rows = m->assemble_prompt(g, s);
    EXPECT_EQ(rows.rows(), 4u);
    EXPECT_EQ(rows.at(1, 0), 1.0);
    EXPECT_EQ(rows.at(2, 0), 2.0);
    EXPECT_THROW(m->assemble_prompt(g, Tensor::full({3, 8}, 2.0)), numerics::DimensionError);
    const std::vector<int> ids = {2, 3, 4};
    const Tensor input = m->frozen().embed_input(m->assemble_prompt(Tensor::zeros({2, 8}), Tensor::zeros({2, 8})), ids);
    EXPECT_EQ(input.rows(), 7u);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(input.at(r, c), 0.0);
}

TEST(ForwardPatient, FirstVisitStateIsBias) {
    const auto m = rt::tiny_model(rt::tiny_model_config());
    const auto out = m->forward_patient(rt::tiny_cohort().patients[0]);
    ASSERT_EQ(out.trace.visits.size(), 2u);
    double bn = 0;
    for (double v : m->b_t().data()) bn += v * v;
    EXPECT_NEAR(out.trace.visits[0].state_prompt_norm, std::sqrt(bn), 1e-12);
    EXPECT_EQ(out.trace.visits[0].alphas.size(), 1u);
    EXPECT_EQ(out.trace.visits[1].alphas.size(), 2u);
}

TEST(ForwardPatient, SingleVisitPatient) {
    const auto m = rt::tiny_model(rt::tiny_model_config());
    const auto p = rt::patient("s", {rt::visit({1}, {1}, {1}, {"stable"})});
    const auto out = m->forward_patient(p);
    EXPECT_EQ(out.trace.visits.size(), 1u);
}

TEST(ForwardPatient, IdenticalPatientsGiveIdenticalLogits) {
    const auto m = rt::tiny_model(rt::tiny_model_config(), 3);
    auto p = rt::tiny_cohort().patients[1];
    auto q = p;
    q.id = "other";
    EXPECT_EQ(logit_of(*m, p), logit_of(*m, q));
    EXPECT_EQ(logit_of(*m, p), logit_of(*m, p));
}

TEST(ForwardPatient, VisitOrderMatters) {
    const auto m = rt::tiny_model(rt::tiny_model_config(), 4);
    auto p = rt::tiny_cohort().patients[2];
    const double before = logit_of(*m, p);
    std::swap(p.visits[0], p.visits[1]);
    EXPECT_NE(before, logit_of(*m, p));
}

TEST(ForwardPatient, RowCountIsPreservedAcrossArms) {
    for (bool sr : {true, false}) {
        for (bool se : {true, false}) {
            auto cfg = rt::tiny_model_config();
            cfg.state_recurrent = sr;
            cfg.struct_encoded = se;
            const auto m = rt::tiny_model(cfg);
            const auto p = rt::tiny_cohort().patients[0];
            numerics::NoGradGuard no_grad;
            const Tensor g = m->recur(Tensor::zeros({8}));
            const Tensor s = se ? m->encoder()->encode(p, 2).prompt : m->constant_struct_prompt();
            const auto ids = m->summary_ids(p, 2);
            EXPECT_EQ(m->frozen().forward(m->assemble_prompt(g, s), ids).rows(), 2 * 2 + ids.size());
        }
    }
}

TEST(ForwardPatient, NonFiniteValuesNameTheVisit) {
    auto m = rt::tiny_model(rt::tiny_model_config());
    m->b_t().mutable_data()[0] = std::nan("");
    try {
        m->forward_patient(rt::tiny_cohort().patients[0]);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("visit 1"), std::string::npos) << e.what();
    }
}

TEST(BceLoss, Cases) {
    EXPECT_NEAR(bce_loss(Tensor::vector({0.0}), {1.0}).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(bce_loss(Tensor::vector({50.0}), {1.0}).item(), 0.0, 1e-20);
    EXPECT_TRUE(std::isfinite(bce_loss(Tensor::vector({-800.0}), {1.0}).item()));
    EXPECT_THROW(bce_loss(Tensor::vector({0.0}), {0.5}), DataError);
}

TEST(Predict, ThresholdConvention) {
    const auto m = rt::tiny_model(rt::tiny_model_config());
    const auto p = m->from_logits({0.0, 10.0, -10.0});
    EXPECT_EQ(p.scores[0], 0.5);
    EXPECT_EQ(p.labels[0], 1);
    EXPECT_NEAR(p.scores[1], 0.9999546, 1e-7);
    EXPECT_NEAR(p.scores[2], 0.0000454, 1e-7);
    EXPECT_EQ(p.labels[1], 1);
    EXPECT_EQ(p.labels[2], 0);
}

TEST(Predict, MedicationTaskIsMultiLabel) {
    auto cfg = rt::tiny_model_config();
    cfg.task = cohort::Task::medication;
    const auto m = rt::tiny_model(cfg);
    EXPECT_EQ(m->n_labels(), 8u);
    const auto pred = m->predict(rt::tiny_cohort().patients[1]);
    EXPECT_EQ(pred.scores.size(), 8u);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(pred.labels[j], pred.scores[j] >= 0.5 ? 1 : 0);
    EXPECT_FALSE(names_of(m->trainable_parameters()).count("embed.rx"));
    // The final visit's medications are the label and never reach the summary.
    const auto ids = m->summary_ids(rt::tiny_cohort().patients[1], 2);
    for (int id : ids) {
        const auto& tok = m->tokens().token(id);
        EXPECT_TRUE(tok != "M3" && tok != "M4") << tok;
    }
}

TEST(Train, ZeroStepsLeaveParametersUnchanged) {
    const auto m = rt::tiny_model(rt::tiny_model_config(), 5);
    std::vector<std::vector<double>> before;
    for (const auto& [n, t] : m->trainable_parameters()) before.push_back(t.to_vector());
    auto opt = make_optimizer(*m, {});
    TrainConfig tc;
    tc.epochs = 0;
    const auto r = train(*m, opt, rt::tiny_cohort(), tc);
    EXPECT_EQ(r.steps, 0u);
    std::size_t k = 0;
    for (const auto& [n, t] : m->trainable_parameters()) EXPECT_EQ(t.to_vector(), before[k++]) << n;
}

TEST(Train, OneStepOnOneSampleReducesItsLoss) {
    const auto m = rt::tiny_model(rt::tiny_model_config(), 6);
    cohort::Cohort one = rt::tiny_cohort();
    one.patients.resize(1);
    const double before = m->loss(one.patients[0]).item();
    auto opt = make_optimizer(*m, {});
    TrainConfig tc;
    tc.epochs = 1;
    train(*m, opt, one, tc);
    EXPECT_LT(m->loss(one.patients[0]).item(), before);
}

TEST(Train, FrozenHashUnchangedAndDeterministic) {
    auto run = [] {
        const auto m = rt::tiny_model(rt::tiny_model_config(), 7);
        auto opt = make_optimizer(*m, {});
        TrainConfig tc;
        tc.epochs = 20;
        tc.batch_size = 2;
        const auto r = train(*m, opt, rt::tiny_cohort(), tc);
        EXPECT_EQ(r.frozen_hash_before, r.frozen_hash_after);
        EXPECT_EQ(r.frozen_hash_after, m->frozen().recorded_hash());
        EXPECT_EQ(r.steps, 40u);
        return logit_of(*m, rt::tiny_cohort().patients[0]);
    };
    EXPECT_EQ(run(), run());
}

TEST(Train, RejectsBadConfig) {
    const auto m = rt::tiny_model(rt::tiny_model_config());
    auto opt = make_optimizer(*m, {});
    TrainConfig tc;
    tc.batch_size = 0;
    EXPECT_THROW(train(*m, opt, rt::tiny_cohort(), tc), ConfigError);
    cohort::Cohort empty = rt::tiny_cohort();
    empty.patients.clear();
    EXPECT_THROW(train(*m, opt, empty, TrainConfig{}), DataError);
}

TEST(Checkpoint, RoundTripRestoresModelAndOptimizer) {
    const auto m = rt::tiny_model(rt::tiny_model_config(), 8);
    auto opt = make_optimizer(*m, {});
    TrainConfig tc;
    tc.epochs = 2;
    train(*m, opt, rt::tiny_cohort(), tc);
    std::stringstream ss;
    m->save(ss, &opt);
    auto loaded = RePrompT::load(ss);
    for (const auto& p : rt::tiny_cohort().patients) EXPECT_EQ(logit_of(*m, p), logit_of(*loaded.model, p));
    ASSERT_TRUE(loaded.optimizer.has_value());
    EXPECT_EQ(loaded.optimizer->steps(), opt.steps());
    EXPECT_EQ(loaded.optimizer->first_moments(), opt.first_moments());
    EXPECT_EQ(loaded.optimizer->second_moments(), opt.second_moments());
    EXPECT_EQ(loaded.model->frozen().recorded_hash(), m->frozen().recorded_hash());
}

TEST(Checkpoint, WrongFrozenHashRejected) {
    const auto m = rt::tiny_model(rt::tiny_model_config(), 9);
    std::stringstream ss;
    m->save(ss);
    std::string bytes = ss.str();
    bytes[bytes.size() - 1] ^= 0x1;
    std::stringstream bad(bytes);
    EXPECT_THROW(RePrompT::load(bad), numerics::FormatError);
}

TEST(Trace, JsonHasPerVisitEntries) {
    const auto m = rt::tiny_model(rt::tiny_model_config());
    const auto j = m->forward_patient(rt::tiny_cohort().patients[2]).trace.to_json();
    EXPECT_EQ(j["patient"], "c");
    ASSERT_EQ(j["visits"].size(), 3u);
    EXPECT_EQ(j["visits"][2]["alphas"].size(), 3u);
    EXPECT_GT(j["visits"][2]["pooled_norm"].get<double>(), 0.0);
}

TEST(ModelConfigTest, JsonRoundTripAndValidation) {
    auto cfg = rt::tiny_model_config();
    cfg.encoder = encoders::EncoderKind::lstm;
    cfg.synthesis.mode = synthesis::Mode::raw;
    const auto back = ModelConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
    EXPECT_EQ(back.to_json(), cfg.to_json());
    cfg.prompt_len = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = rt::tiny_model_config();
    cfg.synthesis.n_max = 40;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
