#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "camenn/checkpoint.hpp"
#include "camenn/errors.hpp"
#include "camenn/synth.hpp"
#include "camenn/train.hpp"

namespace camenn {
namespace {

namespace fs = std::filesystem;

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class TrainTest : public ::testing::Test {
protected:
    static fs::path root() { return fs::temp_directory_path() / "camenn_train_test"; }

    static void SetUpTestSuite() {
        fs::remove_all(root());
        DatasetManifest m;
        m.num_concepts = 4;
        m.num_items = 40;
        m.num_users = 40;
        m.num_interactions = 600;
        write_dataset(root() / "data", generate_dataset(m), m);
    }
    static void TearDownTestSuite() { fs::remove_all(root()); }

    static RunConfig config(const std::string& out) {
        RunConfig c;
        c.data_dir = root() / "data";
        c.output_dir = root() / out;
        c.model.encoder.num_heads = 4;
        c.model.moe.num_experts = 2;
        c.model.max_behavior = 2;
        c.train.batch_size = 8;
        c.train.epochs = 2;
        c.train.patience = 5;
        c.train.max_steps_per_epoch = 4;
        c.optim.lr = 1e-2;
        return c;
    }
};

TEST_F(TrainTest, SmokeRunWritesArtifacts) {
    RunConfig c = config("smoke");
    Workspace ws = prepare_workspace(c);
    TrainResult r = run_training(c, ws);
    for (const char* f : {kInitCheckpoint, kBestCheckpoint, kStateCheckpoint, kReportFile, kTrainLog})
        EXPECT_TRUE(fs::exists(c.output_dir / f)) << f;
    ASSERT_TRUE(r.report.cvr_auc.has_value());
    EXPECT_GE(*r.report.cvr_auc, 0.0);
    EXPECT_LE(*r.report.cvr_auc, 1.0);
    EXPECT_TRUE(r.report.ita_accuracy.has_value());
    EXPECT_EQ(r.report.epochs_run, 2u);
    EXPECT_NE(r.report.to_json().find("\"cvr_auc\""), std::string::npos);
}

TEST_F(TrainTest, SameSeedIsBitIdentical) {
    RunConfig a = config("det_a"), b = config("det_b");
    Workspace ws = prepare_workspace(a);
    run_training(a, ws);
    run_training(b, ws);
    EXPECT_EQ(file_bytes(a.output_dir / kBestCheckpoint), file_bytes(b.output_dir / kBestCheckpoint));
    EXPECT_EQ(file_bytes(a.output_dir / kStateCheckpoint), file_bytes(b.output_dir / kStateCheckpoint));
    RunConfig other = config("det_c");
    other.train.seed = 2;
    run_training(other, ws);
    EXPECT_NE(file_bytes(a.output_dir / kStateCheckpoint), file_bytes(other.output_dir / kStateCheckpoint));
}

TEST_F(TrainTest, ResumeMatchesUninterruptedRun) {
    RunConfig full = config("full");
    full.train.epochs = 3;
    Workspace ws = prepare_workspace(full);
    run_training(full, ws);

    RunConfig part = config("part");
    part.train.epochs = 1;
    run_training(part, ws);
    part.train.epochs = 3;
    run_training(part, ws, nullptr, true);
    EXPECT_EQ(file_bytes(full.output_dir / kStateCheckpoint), file_bytes(part.output_dir / kStateCheckpoint));
    EXPECT_EQ(file_bytes(full.output_dir / kBestCheckpoint), file_bytes(part.output_dir / kBestCheckpoint));
}

TEST_F(TrainTest, CvrOnlyLeavesAlignmentParametersUntouched) {
    RunConfig c = config("cvr_only");
    c.weights = TaskWeights{{0, 0, 1}};
    Workspace ws = prepare_workspace(c);
    run_training(c, ws);
    const auto before = read_checkpoint(c.output_dir / kInitCheckpoint);
    const auto after = read_checkpoint(c.output_dir / kStateCheckpoint);
    std::size_t frozen = 0, moved = 0;
    for (const auto& t : before) {
        const bool alignment = t.name.find("tower_ita") != std::string::npos ||
                               t.name.find("tower_tia") != std::string::npos || t.name.rfind("head.ita", 0) == 0 ||
                               t.name.rfind("head.tia", 0) == 0 || t.name.rfind("gate.ita", 0) == 0 ||
                               t.name.rfind("gate.tia", 0) == 0;
        const auto& a = find_tensor(after, t.name).tensor;
        const bool same = std::equal(a.data().begin(), a.data().end(), t.tensor.data().begin());
        if (alignment) {
            EXPECT_TRUE(same) << t.name;
            ++frozen;
        } else if (!same) {
            ++moved;
        }
    }
    EXPECT_GT(frozen, 20u);
    EXPECT_GT(moved, 20u);
}

TEST_F(TrainTest, SimilarityMatchesDirectComputation) {
    RunConfig c = config("sim");
    Workspace ws = prepare_workspace(c);
    CameNN model(c.model, c.train.seed);
    const auto items = pick_similarity_items(ws, 3);
    ASSERT_EQ(items.size(), 3u);
    SimilarityMatrix m = similarity_matrix(model, ws.bank, items, TaskKind::ITA);

    std::vector<std::vector<double>> text, image;
    for (ItemId id : items) {
        Tape t(false);
        TaskRow row;
        row.label = 1.0;
        row.target = row.text_item = row.image_item = id;
        CameNN::Trace tr = model.forward(t, TaskKind::ITA, row, ws.bank);
        const Tensor& x = tr.moe.mixed.value();
        for (Segment seg : {Segment::Text, Segment::Image}) {
            std::vector<double> v(16, 0.0);
            const auto rows = tr.input.target_rows(seg);
            for (std::size_t r : rows)
                for (std::size_t col = 0; col < 16; ++col) v[col] += x.at(r, col) / rows.size();
            (seg == Segment::Text ? text : image).push_back(v);
        }
    }
    double diag = 0.0, off = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double dot = 0.0, nt = 0.0, ni = 0.0;
            for (std::size_t k = 0; k < 16; ++k) {
                dot += text[i][k] * image[j][k];
                nt += text[i][k] * text[i][k];
                ni += image[j][k] * image[j][k];
            }
            const double cos = dot / std::sqrt(nt * ni);
            EXPECT_NEAR(m.cosine[i][j], cos, 1e-12);
            (i == j ? diag : off) += cos;
        }
    EXPECT_NEAR(m.diagonal_mean(), diag / 3.0, 1e-12);
    EXPECT_NEAR(m.off_diagonal_mean(), off / 6.0, 1e-12);

    std::ostringstream csv;
    write_similarity_csv(csv, m);
    EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')),
              "text\\image,item_" + std::to_string(items[0]) + ",item_" + std::to_string(items[1]) + ",item_" +
                  std::to_string(items[2]));
}

TEST(AblationTable, SummaryUsesSampleStandardDeviation) {
    AblationTable t;
    t.cells = {{ExpertKind::MlpRelu, 1, 0.6}, {ExpertKind::MlpRelu, 2, 0.7}, {ExpertKind::MlpRelu, 3, 0.8},
               {ExpertKind::Recurrent, 1, 0.5}};
    auto [mean, sd] = t.summary(ExpertKind::MlpRelu);
    EXPECT_NEAR(mean, 0.7, 1e-15);
    EXPECT_NEAR(sd, 0.1, 1e-15);
    EXPECT_NE(t.to_csv().find("mlp_relu"), std::string::npos);
}

}  // namespace
}  // namespace camenn
