#include "camenn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "camenn/errors.hpp"
#include "camenn/metrics.hpp"
#include "camenn/optim.hpp"
#include "camenn/rng.hpp"
#include "camenn/synth.hpp"

namespace camenn {

namespace {

std::uint64_t salted(std::uint64_t seed, const char* salt) { return hash_combine(seed, fnv1a64(salt)); }

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

Vocabulary catalog_vocabulary(const Dataset& d) {
    std::vector<std::string> corpus;
    corpus.reserve(d.items.size());
    for (const auto& it : d.items) corpus.push_back(it.text);
    return Vocabulary::build(corpus);
}

bool in_alignment_train(ItemId item, double fraction, std::uint64_t dataset_seed) {
    return hash_unit(hash_combine(salted(dataset_seed, "alignment-items"), item)) < fraction;
}

}  // namespace

std::pair<TextProvider, ImageProvider> make_providers(const RunConfig& config, const Vocabulary& vocab) {
    const std::size_t d = config.model.encoder.d_model;
    const std::size_t patch = (kImageSide / kImageGrid) * (kImageSide / kImageGrid);
    std::optional<TextProvider> text(std::in_place, vocab.size(), d, salted(config.provider_seed, "text"));
    std::optional<ImageProvider> image(std::in_place, patch, d, salted(config.provider_seed, "image"));
    if (!config.provider_import.empty()) import_provider_tables(read_checkpoint(config.provider_import), text, image);
    return {std::move(*text), std::move(*image)};
}

Workspace prepare_workspace(const RunConfig& config) { return prepare_workspace(config, read_dataset(config.data_dir)); }

Workspace prepare_workspace(const RunConfig& config, LoadedDataset loaded) {
    config.validate();
    Vocabulary vocab = catalog_vocabulary(loaded.data);
    auto [text, image] = make_providers(config, vocab);
    FeatureBank bank(loaded.data.items, vocab, text, image, kImageGrid, config.model.max_text_len);

    const DatasetManifest& m = loaded.manifest;
    std::vector<ItemId> align_train, align_heldout;
    for (const auto& it : loaded.data.items)
        (in_alignment_train(it.id, config.train.alignment_fraction, m.seed) ? align_train : align_heldout)
            .push_back(it.id);

    Split split = split_dataset(loaded.data.interactions, m.split_fraction, m.seed);
    std::vector<InteractionRecord> fit, validation;
    for (const auto& r : split.train)
        (hash_unit(hash_combine(salted(m.seed, "validation-users"), r.user)) < config.train.validation_fraction
             ? validation
             : fit)
            .push_back(r);
    const std::size_t hb = config.model.max_behavior;
    TaskBatch cvr_train = build_cvr_batch(fit, hb, salted(m.seed, "cvr-train"));
    TaskBatch cvr_val = build_cvr_batch(validation, hb, salted(m.seed, "cvr-val"));
    TaskBatch cvr_test = build_cvr_batch(split.test, hb, salted(m.seed, "cvr-test"));
    return Workspace{std::move(loaded),        std::move(vocab),         std::move(text),
                     std::move(image),         std::move(bank),          std::move(align_train),
                     std::move(align_heldout), std::move(cvr_train),     std::move(cvr_val),
                     std::move(cvr_test)};
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
        else j[key] = nullptr;
    };
    put("cvr_auc", cvr_auc);
    put("ita_accuracy", ita_accuracy);
    put("tia_accuracy", tia_accuracy);
    put("cvr_loss", cvr_loss);
    put("ita_loss", ita_loss);
    put("tia_loss", tia_loss);
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["epochs_run"] = epochs_run;
    j["best_epoch"] = best_epoch;
    return j.dump(2) + "\n";
}

ScoredRows score_rows(CameNN& model, TaskKind task, std::span<const TaskRow> rows, const FeatureBank& bank) {
    ScoredRows out;
    out.scores.reserve(rows.size());
    out.labels.reserve(rows.size());
    double loss = 0.0;
    for (const auto& row : rows) {
        Tape tape(false);
        const double p = model.forward(tape, task, row, bank).probability.value().item();
        const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
        loss -= row.label > 0.5 ? std::log(q) : std::log(1.0 - q);
        out.scores.push_back(p);
        out.labels.push_back(row.label);
    }
    if (!rows.empty()) out.loss = loss / static_cast<double>(rows.size());
    return out;
}

EvalReport evaluate(CameNN& model, const Workspace& ws, std::span<const TaskRow> cvr_rows,
                    std::span<const ItemId> alignment_items, std::size_t negative_ratio, std::uint64_t seed) {
    EvalReport r;
    if (!cvr_rows.empty()) {
        ScoredRows s = score_rows(model, TaskKind::CVR, cvr_rows, ws.bank);
        r.cvr_auc = auc(s.scores, s.labels);
        r.cvr_loss = s.loss;
    }
    if (alignment_items.size() >= 2) {
        for (TaskKind k : {TaskKind::ITA, TaskKind::TIA}) {
            TaskBatch b = build_alignment_batch(k, alignment_items, std::max<std::size_t>(negative_ratio, 1),
                                                hash_combine(salted(seed, "eval-alignment"), task_index(k)));
            ScoredRows s = score_rows(model, k, b.rows, ws.bank);
            (k == TaskKind::ITA ? r.ita_accuracy : r.tia_accuracy) = accuracy(s.scores, s.labels);
            (k == TaskKind::ITA ? r.ita_loss : r.tia_loss) = s.loss;
        }
    }
    return r;
}

std::vector<NamedTensor> model_tensors(const CameNN& model) {
    std::vector<NamedTensor> out;
    const ParamStore& p = model.params();
    out.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out.push_back({p.entry(i).name, Tensor(p.entry(i).tensor.shape(), p.entry(i).tensor.storage()), DType::F64});
    return out;
}

void load_model_tensors(CameNN& model, const std::vector<NamedTensor>& tensors) {
    ParamStore& p = model.params();
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto& e = p.entry(i);
        const Tensor& src = find_tensor(tensors, e.name).tensor;
        if (src.shape() != e.tensor.shape())
            throw ContractError("checkpoint tensor " + e.name + " has shape " + shape_string(src.shape()) +
                                ", model expects " + shape_string(e.tensor.shape()));
        std::copy(src.data().begin(), src.data().end(), e.tensor.data().begin());
    }
}

std::unique_ptr<CameNN> load_model(const RunConfig& config, const Workspace& ws,
                                   const std::filesystem::path& checkpoint) {
    ModelConfig mc = config.model;
    mc.num_users = ws.dataset.data.users.size();
    auto model = std::make_unique<CameNN>(mc, config.train.seed);
    load_model_tensors(*model, read_checkpoint(checkpoint));
    return model;
}

namespace {

struct TrainState {
    std::size_t next_epoch = 0;
    double best_metric = -1.0;
    std::size_t best_epoch = 0;
    std::size_t bad_epochs = 0;
};

std::vector<NamedTensor> state_tensors(const CameNN& model, const Adam& adam, const TrainState& st) {
    std::vector<NamedTensor> out = model_tensors(model);
    for (auto& t : adam.export_state()) out.push_back(std::move(t));
    out.push_back({"train.next_epoch", Tensor::scalar(static_cast<double>(st.next_epoch)), DType::F64});
    out.push_back({"train.best_metric", Tensor::scalar(st.best_metric), DType::F64});
    out.push_back({"train.best_epoch", Tensor::scalar(static_cast<double>(st.best_epoch)), DType::F64});
    out.push_back({"train.bad_epochs", Tensor::scalar(static_cast<double>(st.bad_epochs)), DType::F64});
    return out;
}

TrainState load_state(CameNN& model, Adam& adam, const std::vector<NamedTensor>& tensors) {
    load_model_tensors(model, tensors);
    adam.import_state(tensors);
    TrainState st;
    st.next_epoch = static_cast<std::size_t>(find_tensor(tensors, "train.next_epoch").tensor.item());
    st.best_metric = find_tensor(tensors, "train.best_metric").tensor.item();
    st.best_epoch = static_cast<std::size_t>(find_tensor(tensors, "train.best_epoch").tensor.item());
    st.bad_epochs = static_cast<std::size_t>(find_tensor(tensors, "train.bad_epochs").tensor.item());
    return st;
}

void emit(std::ostream* console, std::ofstream& file, const std::string& line) {
    file << line << '\n';
    file.flush();
    if (console) *console << line << std::endl;
}

double monitored_metric(const EvalReport& r, const TaskWeights& w) {
    if (w.active(TaskKind::CVR)) return *r.cvr_auc;
    double s = 0.0, n = 0.0;
    if (w.active(TaskKind::ITA)) s += *r.ita_accuracy, n += 1;
    if (w.active(TaskKind::TIA)) s += *r.tia_accuracy, n += 1;
    return s / n;
}

}  // namespace

TrainResult run_training(const RunConfig& config, const Workspace& ws, std::ostream* console, bool resume) {
    config.validate();
    const auto& out_dir = config.output_dir;
    std::filesystem::create_directories(out_dir);
    const TrainSettings& ts = config.train;
    const std::uint64_t seed = ts.seed;

    ModelConfig mc = config.model;
    mc.num_users = ws.dataset.data.users.size();
    CameNN model(mc, seed);
    Adam adam(model.params(), config.optim);
    TrainState st;

    std::ofstream logfile(out_dir / kTrainLog, resume ? std::ios::app : std::ios::trunc);
    if (resume) {
        st = load_state(model, adam, read_checkpoint(out_dir / kStateCheckpoint));
        emit(console, logfile, "event=resume next_epoch=" + std::to_string(st.next_epoch + 1));
    } else {
        write_checkpoint(out_dir / kInitCheckpoint, model_tensors(model));
        emit(console, logfile,
             "event=start seed=" + std::to_string(seed) + " config_hash=" + config.hash() +
                 " params=" + std::to_string(model.params().value_count()) +
                 " cvr_train_rows=" + std::to_string(ws.cvr_train.rows.size()) +
                 " alignment_items=" + std::to_string(ws.alignment_train_items.size()));
    }

    // Validation alignment rows come from held-out items; used only when CVR is inactive.
    const bool cvr_active = config.weights.active(TaskKind::CVR);
    if (cvr_active && ws.cvr_validation.rows.empty())
        throw ConfigError("validation split is empty; raise train.validation_fraction");

    while (st.next_epoch < ts.epochs && st.bad_epochs < ts.patience) {
        const std::size_t epoch = st.next_epoch;
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t epoch_seed = hash_combine(seed, epoch);

        std::array<std::vector<TaskRow>, 3> rows;
        std::size_t steps = 0;
        for (TaskKind k : kAllTasks) {
            if (!config.weights.active(k)) continue;
            auto& r = rows[task_index(k)];
            if (k == TaskKind::CVR) {
                r = ws.cvr_train.rows;
                Rng(hash_combine(epoch_seed, 101)).shuffle(std::span<TaskRow>(r));
            } else {
                r = build_alignment_batch(k, ws.alignment_train_items, ts.negative_ratio,
                                          hash_combine(epoch_seed, 200 + task_index(k)))
                        .rows;
            }
            if (r.empty()) throw ConfigError("no training rows for task " + std::string(task_name(k)));
            steps = std::max(steps, (r.size() + ts.batch_size - 1) / ts.batch_size);
        }
        if (ts.max_steps_per_epoch) steps = std::min(steps, ts.max_steps_per_epoch);

        std::array<double, 3> loss_sum{};
        for (std::size_t s = 0; s < steps; ++s) {
            std::array<std::span<const TaskRow>, 3> batches;
            for (TaskKind k : kAllTasks) {
                const auto& r = rows[task_index(k)];
                if (r.empty()) continue;
                const std::size_t nb = (r.size() + ts.batch_size - 1) / ts.batch_size;
                const std::size_t begin = (s % nb) * ts.batch_size;
                batches[task_index(k)] =
                    std::span<const TaskRow>(r).subspan(begin, std::min(ts.batch_size, r.size() - begin));
            }
            std::optional<std::uint64_t> dropout_seed;
            if (config.model.encoder.dropout > 0.0) dropout_seed = hash_combine(epoch_seed, 1000 + s);
            Tape tape;
            JointLoss jl = joint_loss(tape, model, batches, config.weights, ws.bank, dropout_seed);
            tape.backward(jl.total);
            adam.step();
            model.params().zero_grad();
            for (TaskKind k : kAllTasks)
                if (jl.task_loss[task_index(k)]) loss_sum[task_index(k)] += *jl.task_loss[task_index(k)];
        }

        EvalReport val = cvr_active ? evaluate(model, ws, ws.cvr_validation.rows, {}, ts.negative_ratio, seed)
                                    : evaluate(model, ws, {}, ws.alignment_heldout_items, ts.negative_ratio, seed);
        const double metric = monitored_metric(val, config.weights);
        const bool improved = metric > st.best_metric;
        if (improved) {
            st.best_metric = metric;
            st.best_epoch = epoch + 1;
            st.bad_epochs = 0;
            write_checkpoint(out_dir / kBestCheckpoint, model_tensors(model));
        } else {
            ++st.bad_epochs;
        }
        st.next_epoch = epoch + 1;
        write_checkpoint(out_dir / kStateCheckpoint, state_tensors(model, adam, st));

        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string line = "event=epoch epoch=" + std::to_string(epoch + 1) + " steps=" + std::to_string(steps);
        for (TaskKind k : kAllTasks)
            if (config.weights.active(k))
                line += " loss_" + std::string(task_name(k)) + "=" + fmt(loss_sum[task_index(k)] / steps);
        line += std::string(cvr_active ? " val_cvr_auc=" : " val_alignment_accuracy=") + fmt(metric);
        line += " improved=" + std::string(improved ? "1" : "0") + " seconds=" + fmt(secs);
        emit(console, logfile, line);
    }

    load_model_tensors(model, read_checkpoint(out_dir / kBestCheckpoint));
    std::vector<ItemId> eval_items = ws.alignment_heldout_items;
    if (ts.eval_alignment_items && eval_items.size() > ts.eval_alignment_items) eval_items.resize(ts.eval_alignment_items);
    EvalReport report = evaluate(model, ws, ws.cvr_test.rows, eval_items, ts.negative_ratio, seed);
    report.seed = seed;
    report.config_hash = config.hash();
    report.epochs_run = st.next_epoch;
    report.best_epoch = st.best_epoch;
    {
        std::ofstream f(out_dir / kReportFile);
        f << report.to_json();
    }
    std::string line = "event=done best_epoch=" + std::to_string(st.best_epoch);
    if (report.cvr_auc) line += " test_cvr_auc=" + fmt(*report.cvr_auc);
    if (report.ita_accuracy) line += " test_ita_accuracy=" + fmt(*report.ita_accuracy);
    if (report.tia_accuracy) line += " test_tia_accuracy=" + fmt(*report.tia_accuracy);
    emit(console, logfile, line);
    return {report, out_dir / kBestCheckpoint};
}

double SimilarityMatrix::diagonal_mean() const {
    double s = 0.0;
    for (std::size_t i = 0; i < cosine.size(); ++i) s += cosine[i][i];
    return s / static_cast<double>(cosine.size());
}

double SimilarityMatrix::off_diagonal_mean() const {
    double s = 0.0;
    const std::size_t n = cosine.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) s += cosine[i][j];
    return s / static_cast<double>(n * (n - 1));
}

SimilarityMatrix similarity_matrix(CameNN& model, const FeatureBank& bank, std::span<const ItemId> items,
                                   TaskKind task) {
    if (items.size() < 2) throw ContractError("similarity export needs at least two items");
    SimilarityMatrix m;
    m.items.assign(items.begin(), items.end());
    const std::size_t d = model.config().encoder.d_model;
    std::vector<std::vector<double>> text(items.size()), image(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        Tape tape(false);
        TaskRow row{1.0, items[i], items[i], items[i], 0, 0, {}, {}};
        InputSequence in = model.build_input(tape, TaskKind::ITA, row, bank);
        Var x = model.frame().shared_bottom(in.embeddings);
        const Tensor& mixed = model.frame().moe_forward(task, in.embeddings, x).mixed.value();
        auto pool = [&](Segment seg) {
            std::vector<double> v(d, 0.0);
            const auto rows = in.target_rows(seg);
            for (std::size_t r : rows)
                for (std::size_t c = 0; c < d; ++c) v[c] += mixed.at(r, c);
            for (auto& x : v) x /= static_cast<double>(std::max<std::size_t>(rows.size(), 1));
            return v;
        };
        text[i] = pool(Segment::Text);
        image[i] = pool(Segment::Image);
    }
    auto norm = [](const std::vector<double>& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); };
    m.cosine.assign(items.size(), std::vector<double>(items.size(), 0.0));
    for (std::size_t i = 0; i < items.size(); ++i) {
        const double nt = norm(text[i]);
        if (nt == 0.0) m.warnings.push_back("zero-norm text embedding for item " + std::to_string(items[i]));
        for (std::size_t j = 0; j < items.size(); ++j) {
            const double ni = norm(image[j]);
            if (i == 0 && ni == 0.0)
                m.warnings.push_back("zero-norm image embedding for item " + std::to_string(items[j]));
            if (nt == 0.0 || ni == 0.0) continue;
            m.cosine[i][j] = std::inner_product(text[i].begin(), text[i].end(), image[j].begin(), 0.0) / (nt * ni);
        }
    }
    return m;
}

void write_similarity_csv(std::ostream& out, const SimilarityMatrix& m) {
    out << "text\\image";
    for (ItemId id : m.items) out << ",item_" << id;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < m.items.size(); ++i) {
        out << "item_" << m.items[i];
        for (double v : m.cosine[i]) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
    for (const auto& w : m.warnings) out << "warning," << w << '\n';
}

std::vector<ItemId> pick_similarity_items(const Workspace& ws, std::size_t count) {
    std::vector<ItemId> out;
    std::set<std::size_t> concepts;
    for (ItemId id : ws.alignment_heldout_items) {
        if (out.size() == count) break;
        if (concepts.insert(ws.dataset.data.items[id].concept_id).second) out.push_back(id);
    }
    return out;
}

std::pair<double, double> AblationTable::summary(ExpertKind kind) const {
    std::vector<double> v;
    for (const auto& c : cells)
        if (c.kind == kind) v.push_back(c.cvr_auc);
    if (v.empty()) return {0.0, 0.0};
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string AblationTable::to_csv() const {
    std::ostringstream out;
    char buf[64];
    out << "frame,seed,cvr_auc\n";
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof buf, "%.17g", c.cvr_auc);
        out << expert_kind_name(c.kind) << ',' << c.seed << ',' << buf << '\n';
    }
    out << "frame,mean,std\n";
    for (ExpertKind k : {ExpertKind::MlpRelu, ExpertKind::Recurrent, ExpertKind::Transformer}) {
        auto [mean, sd] = summary(k);
        std::snprintf(buf, sizeof buf, "%.6f,%.6f", mean, sd);
        out << expert_kind_name(k) << ',' << buf << '\n';
    }
    return out.str();
}

AblationTable run_ablation(const RunConfig& config, const Workspace& ws, std::span<const std::uint64_t> seeds,
                           std::ostream* log) {
    AblationTable table;
    for (ExpertKind kind : {ExpertKind::MlpRelu, ExpertKind::Recurrent, ExpertKind::Transformer})
        for (std::uint64_t s : seeds) {
            RunConfig c = config;
            c.model.moe.expert_kind = kind;
            c.train.seed = s;
            c.output_dir = config.output_dir / (std::string(expert_kind_name(kind)) + "_seed" + std::to_string(s));
            TrainResult r = run_training(c, ws, log);
            table.cells.push_back({kind, s, r.report.cvr_auc.value_or(0.0)});
        }
    return table;
}

}  // namespace camenn
