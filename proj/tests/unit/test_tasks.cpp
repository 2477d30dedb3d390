#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "camenn/errors.hpp"
#include "camenn/synth.hpp"
#include "camenn/tasks.hpp"
#include "test_util.hpp"
#include "tiny_world.hpp"

namespace camenn {
namespace {

using testing::TinyWorld;

std::vector<ItemId> item_range(std::size_t n) {
    std::vector<ItemId> ids(n);
    std::iota(ids.begin(), ids.end(), ItemId{0});
    return ids;
}

TEST(AlignmentBatch, NoNegativesMeansAllPositive) {
    const auto items = item_range(5);
    for (TaskKind task : {TaskKind::ITA, TaskKind::TIA}) {
        TaskBatch b = build_alignment_batch(task, items, 0, 1);
        ASSERT_EQ(b.rows.size(), 5u);
        for (const auto& r : b.rows) {
            EXPECT_EQ(r.label, 1.0);
            EXPECT_EQ(r.text_item, r.image_item);
        }
    }
}

TEST(AlignmentBatch, TwoItemsForceTheOtherItem) {
    const std::vector<ItemId> items{4, 9};
    TaskBatch ita = build_alignment_batch(TaskKind::ITA, items, 3, 7);
    for (const auto& r : ita.rows) {
        if (r.label == 1.0) continue;
        EXPECT_EQ(r.text_item, r.image_item == 4 ? 9u : 4u);
        EXPECT_EQ(r.target, r.image_item);
    }
    TaskBatch tia = build_alignment_batch(TaskKind::TIA, items, 3, 7);
    for (const auto& r : tia.rows) {
        if (r.label == 1.0) continue;
        EXPECT_EQ(r.image_item, r.text_item == 4 ? 9u : 4u);
        EXPECT_EQ(r.target, r.text_item);
    }
}

TEST(AlignmentBatch, SubstituteFrequencyIsUniform) {
    const auto items = item_range(10);
    std::map<ItemId, std::size_t> counts;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TaskBatch b = build_alignment_batch(TaskKind::ITA, items, 1000, seed);
        for (const auto& r : b.rows)
            if (r.label == 0.0 && r.image_item == 0) {
                ++counts[r.text_item];
                ++n;
            }
    }
    ASSERT_EQ(n, 10000u);
    EXPECT_EQ(counts.count(0), 0u);
    const double p = 1.0 / 9.0;
    const double sigma = std::sqrt(n * p * (1.0 - p));
    for (ItemId other = 1; other < 10; ++other)
        EXPECT_NEAR(static_cast<double>(counts[other]), n * p, 3.0 * sigma) << "item " << other;
}

TEST(AlignmentBatch, LabelsMatchSourcesAndShuffleIsSeeded) {
    const auto items = item_range(20);
    TaskBatch a = build_alignment_batch(TaskKind::TIA, items, 4, 11);
    ASSERT_EQ(a.rows.size(), 100u);
    std::size_t negatives = 0;
    for (const auto& r : a.rows) {
        EXPECT_EQ(r.label == 1.0, r.text_item == r.image_item);
        negatives += r.label == 0.0;
    }
    EXPECT_EQ(negatives, 80u);
    TaskBatch b = build_alignment_batch(TaskKind::TIA, items, 4, 11);
    TaskBatch c = build_alignment_batch(TaskKind::TIA, items, 4, 12);
    auto order = [](const TaskBatch& t) {
        std::vector<std::pair<ItemId, ItemId>> o;
        for (const auto& r : t.rows) o.emplace_back(r.text_item, r.image_item);
        return o;
    };
    EXPECT_EQ(order(a), order(b));
    EXPECT_NE(order(a), order(c));
}

TEST(AlignmentBatch, ContractErrors) {
    const std::vector<ItemId> one{3};
    EXPECT_THROW(build_alignment_batch(TaskKind::ITA, one, 1, 0), ContractError);
    EXPECT_NO_THROW(build_alignment_batch(TaskKind::ITA, one, 0, 0));
    EXPECT_THROW(build_alignment_batch(TaskKind::ITA, {}, 0, 0), ContractError);
    EXPECT_THROW(build_alignment_batch(TaskKind::CVR, item_range(3), 1, 0), ContractError);
}

TEST(CvrBatch, ColdStartHasNoHistory) {
    const std::vector<InteractionRecord> log{{7, 5, 1, true}, {7, 9, 2, false}, {8, 3, 2, true}};
    TaskBatch b = build_cvr_batch(log, 3, 0);
    ASSERT_EQ(b.rows.size(), 3u);
    for (const auto& r : b.rows) {
        if (r.user == 8 || r.timestamp == 5) {
            EXPECT_TRUE(r.history.empty());
        } else {
            EXPECT_EQ(r.history, std::vector<ItemId>{1});
            EXPECT_EQ(r.label, 0.0);
        }
    }
}

TEST(CvrBatch, EqualTimestampsAreNotHistory) {
    const std::vector<InteractionRecord> log{{1, 4, 10, true}, {1, 4, 11, true}, {1, 5, 12, false}};
    TaskBatch b = build_cvr_batch(log, 5, 0);
    for (const auto& r : b.rows) {
        if (r.timestamp == 4) {
            EXPECT_TRUE(r.history.empty());
        } else {
            EXPECT_EQ(r.history, (std::vector<ItemId>{10, 11}));
        }
    }
}

// Brute-force scan: each row's history must equal the last `max_behavior`
// purchases of the same user strictly before the row, oldest first.
TEST(CvrBatch, LeakageScanOnGeneratedLog) {
    DatasetManifest m;
    m.num_items = 400;
    m.num_users = 300;
    m.num_interactions = 50000;
    const Dataset data = generate_dataset(m);
    const std::size_t max_behavior = 3;
    TaskBatch b = build_cvr_batch(data.interactions, max_behavior, 5);
    ASSERT_EQ(b.rows.size(), 50000u);

    std::map<UserId, std::vector<const InteractionRecord*>> by_user;
    for (const auto& r : data.interactions) by_user[r.user].push_back(&r);
    std::size_t with_history = 0;
    for (const auto& row : b.rows) {
        std::vector<ItemId> expected;
        std::vector<std::uint64_t> expected_ts;
        for (const InteractionRecord* r : by_user.at(row.user))
            if (r->bought && r->timestamp < row.timestamp) {
                expected.push_back(r->item);
                expected_ts.push_back(r->timestamp);
            }
        if (expected.size() > max_behavior) {
            expected.erase(expected.begin(), expected.end() - max_behavior);
            expected_ts.erase(expected_ts.begin(), expected_ts.end() - max_behavior);
        }
        ASSERT_EQ(row.history, expected);
        ASSERT_EQ(row.history_timestamps, expected_ts);
        for (std::uint64_t t : row.history_timestamps) ASSERT_LT(t, row.timestamp);
        with_history += !row.history.empty();
    }
    EXPECT_GT(with_history, 10000u);
}

TEST(CvrBatch, PositiveToNegativeRatioIsOneToFour) {
    DatasetManifest m;
    m.num_items = 500;
    m.num_users = 400;
    m.num_interactions = 20000;
    const Dataset data = generate_dataset(m);
    TaskBatch b = build_cvr_batch(data.interactions, 3, 0);
    double pos = 0.0;
    for (const auto& r : b.rows) pos += r.label;
    const double ratio = pos / (b.rows.size() - pos);
    EXPECT_NEAR(ratio, 0.25, 0.25 * 0.05);
}

TEST(TaskWeights, Validation) {
    EXPECT_NO_THROW((TaskWeights{{1, 1, 1}}.validate()));
    EXPECT_NO_THROW((TaskWeights{{0, 0, 1}}.validate()));
    EXPECT_THROW((TaskWeights{{0, 0, 0}}.validate()), ContractError);
    EXPECT_THROW((TaskWeights{{-1, 1, 1}}.validate()), ContractError);
    EXPECT_THROW((TaskWeights{{1, NAN, 1}}.validate()), ContractError);
    TaskWeights w{{0, 2, 1}};
    EXPECT_FALSE(w.active(TaskKind::ITA));
    EXPECT_TRUE(w.active(TaskKind::TIA));
    EXPECT_EQ(w[TaskKind::TIA], 2.0);
}

struct HeadFixture {
    ParamStore params;
    HeadParams head;
    HeadFixture() { head = HeadParams::create(params, TaskKind::CVR, 4, 9); }
};

TEST(Head, ZeroParametersGiveOneHalf) {
    HeadFixture f;
    init_constant(*f.head.w, 0.0);
    Rng rng(1);
    Tape t;
    Var tower = t.constant(testing::random_tensor({5, 4}, rng, -3, 3, false));
    for (HeadPooling pool : {HeadPooling::Cls, HeadPooling::MeanPool})
        EXPECT_EQ(head_forward(tower, f.head, pool, 2).value()[0], 0.5);
}

TEST(Head, ReadsClsRowOrMean) {
    HeadFixture f;
    Rng rng(2);
    const Tensor x = testing::random_tensor({3, 4}, rng, -1, 1, false);
    (*f.head.b)[0] = 0.25;
    Tape t;
    Var tower = t.constant(x);
    double cls = 0.25, mean = 0.25;
    for (std::size_t c = 0; c < 4; ++c) {
        cls += (*f.head.w)[c] * x[1 * 4 + c];
        mean += (*f.head.w)[c] * (x[c] + x[4 + c] + x[8 + c]) / 3.0;
    }
    EXPECT_NEAR(head_forward(tower, f.head, HeadPooling::Cls, 1).value()[0], 1.0 / (1.0 + std::exp(-cls)), 1e-15);
    EXPECT_NEAR(head_forward(tower, f.head, HeadPooling::MeanPool, 1).value()[0], 1.0 / (1.0 + std::exp(-mean)),
                1e-15);
}

TEST(Head, SaturatedProbabilityIsClampedInBce) {
    HeadFixture f;
    (*f.head.b)[0] = 1e3;
    Tape t;
    Var tower = t.constant(Tensor({2, 4}, 0.0));
    Var p = head_forward(tower, f.head, HeadPooling::MeanPool, 0);
    EXPECT_GT(p.value()[0], 0.0);
    EXPECT_LE(p.value()[0], 1.0);
    const double label = 0.0;
    Var loss = bce_loss(p, std::span<const double>(&label, 1));
    EXPECT_NEAR(loss.value()[0], -std::log(kProbClamp), 1e-6);
    EXPECT_TRUE(std::isfinite(loss.value()[0]));
}

TEST(Head, GradientThroughHeadIntoTower) {
    for (HeadPooling pool : {HeadPooling::Cls, HeadPooling::MeanPool}) {
        HeadFixture f;
        Rng rng(4);
        Tensor tower = testing::random_tensor({4, 4}, rng);
        testing::expect_gradcheck(
            [&](Tape& t) {
                const double label = 1.0;
                return bce_loss(head_forward(t.leaf(tower), f.head, pool, 3), std::span<const double>(&label, 1));
            },
            {&tower, f.head.w, f.head.b});
    }
}

TEST(CombineLosses, WeightsAndErrors) {
    Tape t;
    std::vector<std::optional<Var>> losses{t.constant(Tensor({1}, 2.0)), t.constant(Tensor({1}, 3.0)),
                                           t.constant(Tensor({1}, 5.0))};
    EXPECT_DOUBLE_EQ(combine_losses(losses, TaskWeights{{1, 1, 1}}).value()[0], 10.0);
    EXPECT_DOUBLE_EQ(combine_losses(losses, TaskWeights{{0, 0.5, 2}}).value()[0], 11.5);
    EXPECT_THROW(combine_losses(losses, TaskWeights{{0, 0, 0}}), ContractError);
}

class JointLossTest : public ::testing::Test {
protected:
    TinyWorld world;
    CameNN model{testing::tiny_model_config(), 21};
    std::vector<TaskRow> ita{testing::alignment_row(0, 0), testing::alignment_row(1, 0)};
    std::vector<TaskRow> tia{testing::alignment_row(2, 2), testing::alignment_row(2, 4)};
    std::vector<TaskRow> cvr{testing::cvr_row(1, 3, {0, 5}, 1.0), testing::cvr_row(2, 4, {}, 0.0)};

    std::array<std::span<const TaskRow>, 3> batches() const { return {ita, tia, cvr}; }

    std::vector<Tensor> grads_of(const TaskWeights& w) {
        model.params().zero_grad();
        Tape t;
        JointLoss l = joint_loss(t, model, batches(), w, world.bank);
        t.backward(l.total);
        std::vector<Tensor> out;
        for (std::size_t i = 0; i < model.params().size(); ++i) {
            const Tensor& p = model.params().entry(i).tensor;
            out.emplace_back(p.shape(), std::vector<double>(p.grad().begin(), p.grad().end()));
        }
        return out;
    }
};

TEST_F(JointLossTest, ZeroHeadsGiveThreeLnTwo) {
    for (TaskKind k : kAllTasks) {
        init_constant(*model.head(k).w, 0.0);
        init_constant(*model.head(k).b, 0.0);
    }
    Tape t;
    JointLoss l = joint_loss(t, model, batches(), TaskWeights{}, world.bank);
    EXPECT_NEAR(l.total.value()[0], 3.0 * std::log(2.0), 1e-12);
    for (const auto& v : l.task_loss) EXPECT_NEAR(v.value(), std::log(2.0), 1e-12);
}

TEST_F(JointLossTest, CvrOnlyWeightsEqualCvrLossExactly) {
    Tape t1, t2;
    JointLoss l = joint_loss(t1, model, batches(), TaskWeights{{0, 0, 1}}, world.bank);
    Var cvr_only = model.task_loss(t2, TaskKind::CVR, cvr, world.bank);
    EXPECT_EQ(l.total.value()[0], cvr_only.value()[0]);
    EXPECT_FALSE(l.task_loss[0].has_value());
    EXPECT_FALSE(l.task_loss[1].has_value());
    EXPECT_TRUE(l.task_loss[2].has_value());
}

TEST_F(JointLossTest, GradientIsSumOfTaskGradients) {
    const auto joint = grads_of(TaskWeights{{1, 1, 1}});
    const auto g_ita = grads_of(TaskWeights{{1, 0, 0}});
    const auto g_tia = grads_of(TaskWeights{{0, 1, 0}});
    const auto g_cvr = grads_of(TaskWeights{{0, 0, 1}});
    double worst = 0.0;
    for (std::size_t i = 0; i < joint.size(); ++i)
        for (std::size_t j = 0; j < joint[i].size(); ++j) {
            const double sum = g_ita[i][j] + g_tia[i][j] + g_cvr[i][j];
            worst = std::max(worst, std::abs(joint[i][j] - sum) / std::max(1.0, std::abs(sum)));
        }
    EXPECT_LT(worst, 1e-12);
}

}  // namespace
}  // namespace camenn
