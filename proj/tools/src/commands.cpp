#include "cgm_cli/commands.hpp"

#include "cgm/training.hpp"
#include "cgm_cli/varbench.hpp"
#include "cgm_cli/verify.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <ostream>

namespace cgm::cli {

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    std::ofstream out(path);
    if (!out) {
        throw InputError(fmt::format("cannot write {}", path.string()));
    }
    out << doc.dump(2) << '\n';
}

std::string quantile_key(double q) { return fmt::format("{}", q); }

nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.begin(), v.end()); }

void print_summary(std::ostream& out, const MetricReport& report) {
    auto line = [&](const char* name, const MonteCarloValue& v) {
        fmt::print(out, "  {:<14} {:>13.6e} +- {:.2e}\n", name, v.mean, v.se);
    };
    fmt::print(out, "metric (normalized units, {} test records, {} reps)\n", report.test_records,
               report.settings.n_reps);
    line("jmmd_shifted", report.jmmd_shifted);
    if (report.jmmd_with_c1) {
        line("jmmd_with_c1", *report.jmmd_with_c1);
    }
    line("ammd_shifted", report.ammd_shifted);
    if (report.ammd_with_c0) {
        line("ammd_with_c0", *report.ammd_with_c0);
    }
    line("fid", report.fid);
}

struct Evaluation {
    MetricReport metrics;
    nlohmann::json doc;
};

Evaluation evaluate(const RunConfig& config, const ConditionalGenerator& gen, const PreparedData& data) {
    if (gen.x_dim() != data.test.x_dim() || gen.y_dim() != data.test.y_dim()) {
        throw ConfigError(fmt::format("model dimensions (x {}, y {}) do not match the dataset (x {}, y {})",
                                      gen.x_dim(), gen.y_dim(), data.test.x_dim(), data.test.y_dim()));
    }
    const TrainingKernels kernels = make_training_kernels(config.train, data.train);
    EvalSettings settings;
    settings.m_draws = config.eval.m_draws;
    settings.n_reps = config.eval.n_reps;
    settings.seed = eval_seed(config);
    Evaluation ev{evaluate_model(gen, data.test, *kernels.kx, *kernels.ky, settings), {}};
    ev.doc = ev.metrics.to_json();
    ev.doc["loss"] = to_string(config.train.loss);
    ev.doc["seed"] = config.seed;

    nlohmann::json conditional = nlohmann::json::array();
    const ConditionalSampler sampler = make_sampler(gen);
    for (std::size_t i = 0; i < config.eval.probes.size(); ++i) {
        const Vector& x = config.eval.probes[i];
        if (x.size() != gen.x_dim()) {
            throw ConfigError(fmt::format("eval.probes[{}]: expected {} coordinates", i, gen.x_dim()));
        }
        const ConditionalSummary s = conditional_summaries(sampler, x, config.eval.summary_draws,
                                                           derive_seed(eval_seed(config), 1000 + i),
                                                           config.eval.quantiles);
        nlohmann::json q = nlohmann::json::object();
        for (std::size_t k = 0; k < s.levels.size(); ++k) {
            q[quantile_key(s.levels[k])] = vector_json(s.quantiles[k]);
        }
        conditional.push_back({{"x", vector_json(x)}, {"mean", vector_json(s.mean)}, {"std", vector_json(s.std)},
                               {"quantiles", q}});
    }
    ev.doc["conditional"] = conditional;
    return ev;
}

}  // namespace

PreparedData prepare_data(const RunConfig& config) {
    PreparedData out;
    Dataset raw;
    if (config.dataset.source == DatasetConfig::Source::Csv) {
        raw = load_csv(config.dataset.csv_path, config.dataset.targets, config.dataset.has_header);
    } else {
        SyntheticData syn = gen_synthetic(config.dataset.synthetic);
        raw = std::move(syn.dataset);
        out.truth = std::move(syn.truth);
    }
    Split split = normalize_split(raw, config.dataset.test_fraction, split_seed(config));
    out.train = std::move(split.train);
    out.test = std::move(split.test);
    return out;
}

nlohmann::json build_report(const RunConfig& config, const ConditionalGenerator& gen, const PreparedData& data) {
    return evaluate(config, gen, data).doc;
}

int run_guarded(const std::function<int()>& body, std::ostream& err) {
    try {
        return body();
    } catch (const ParseError& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kExitConfig;
    } catch (const SchemaError& e) {
        fmt::print(err, "schema error: {}\n", e.what());
        return kExitConfig;
    } catch (const ConfigError& e) {
        fmt::print(err, "config error: {}\n", e.what());
        return kExitConfig;
    } catch (const InputError& e) {
        fmt::print(err, "input error: {}\n", e.what());
        return kExitConfig;
    } catch (const NumericError& e) {
        fmt::print(err, "numeric error: {}\n", e.what());
        return kExitNumeric;
    } catch (const std::filesystem::filesystem_error& e) {
        fmt::print(err, "file error: {}\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        fmt::print(err, "internal error: {}\n", e.what());
        return kExitInternal;
    }
}

int cmd_train(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err) {
    return run_guarded(
        [&] {
            const RunConfig config = load_run_config(config_path);
            const PreparedData data = prepare_data(config);
            fmt::print(out, "training {} on {} records ({} pairs), {} epochs\n", to_string(config.train.loss),
                       data.train.records.size(), data.train.output_count(), config.train.epochs);
            const auto start = std::chrono::steady_clock::now();
            const TrainResult result = train(config.train, data.train);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            fmt::print(out, "final epoch loss {:.6e} ({:.1f} s)\n", result.history.epochs.back().mean_loss, secs);
            const Evaluation ev = evaluate(config, result.generator, data);
            print_summary(out, ev.metrics);

            std::filesystem::create_directories(config.out_dir);
            save_generator(config.out_dir / kModelFile, result.generator);
            result.history.write_csv(config.out_dir / kHistoryFile);
            write_json(config.out_dir / kReportFile, ev.doc);
            fmt::print(out, "wrote {}, {}, {} to {}\n", kModelFile, kHistoryFile, kReportFile,
                       config.out_dir.string());
            return static_cast<int>(kExitOk);
        },
        err);
}

int cmd_eval(const std::filesystem::path& config_path, const std::filesystem::path& model_path, std::ostream& out,
             std::ostream& err) {
    return run_guarded(
        [&] {
            const RunConfig config = load_run_config(config_path);
            const ConditionalGenerator gen = load_generator(model_path);
            const PreparedData data = prepare_data(config);
            const Evaluation ev = evaluate(config, gen, data);
            print_summary(out, ev.metrics);
            std::filesystem::create_directories(config.out_dir);
            write_json(config.out_dir / kEvalReportFile, ev.doc);
            fmt::print(out, "wrote {}\n", (config.out_dir / kEvalReportFile).string());
            return static_cast<int>(kExitOk);
        },
        err);
}

int cmd_verify(const std::string& mutation, std::ostream& out, std::ostream& err) {
    return run_guarded(
        [&] {
            const Mutation mut = parse_mutation(mutation);
            if (mut != Mutation::None) {
                fmt::print(out, "mutation active: {}\n", mutation);
            }
            const auto start = std::chrono::steady_clock::now();
            const auto results = run_verification(mut);
            std::size_t failed = 0;
            for (const auto& r : results) {
                fmt::print(out, "{} {:<22} {}\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
                failed += r.passed ? 0 : 1;
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            fmt::print(out, "{} of {} checks passed in {:.1f} s\n", results.size() - failed, results.size(), secs);
            if (failed > 0) {
                fmt::print(err, "failed checks:");
                for (const auto& r : results) {
                    if (!r.passed) {
                        fmt::print(err, " {}", r.name);
                    }
                }
                fmt::print(err, "\n");
                return static_cast<int>(kExitCheckFailed);
            }
            return static_cast<int>(kExitOk);
        },
        err);
}

int cmd_varbench(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err) {
    return run_guarded(
        [&] {
            const RunConfig config = load_run_config(config_path);
            if (config.dataset.source != DatasetConfig::Source::Synthetic) {
                throw ConfigError("varbench needs a synthetic dataset");
            }
            const auto truth = make_ground_truth(config.dataset.synthetic);
            // Pilot draws only feed median-heuristic bandwidths.
            std::mt19937_64 rng(derive_seed(config.seed, 200));
            Points xs, ys;
            for (int i = 0; i < 500; ++i) {
                xs.push_back(truth->sample_x(rng));
                ys.push_back(truth->sample_y(xs.back(), rng));
            }
            const KernelPtr kx = make_kernel(config.train.kx, truth->x_dim(), xs);
            const KernelPtr ky = make_kernel(config.train.ky, truth->y_dim(), ys);
            const VarbenchResult result =
                run_varbench(*truth, *kx, *ky, config.varbench, derive_seed(config.seed, 201));
            for (const auto& row : result.rows) {
                fmt::print(out, "{:<5} n={:<4} m={:<3} r={:<3} var={:.6e} ({} reps)\n", row.estimator, row.n, row.m,
                           row.r, row.emp_var, row.reps);
            }
            for (const auto& a : result.assertions) {
                fmt::print(out, "{} {:<26} {}\n", a.passed ? "PASS" : "FAIL", a.name, a.detail);
            }
            std::filesystem::create_directories(config.out_dir);
            result.write_csv(config.out_dir / kVarbenchFile);
            fmt::print(out, "wrote {}\n", (config.out_dir / kVarbenchFile).string());
            return static_cast<int>(result.passed() ? kExitOk : kExitCheckFailed);
        },
        err);
}

int cmd_synth(const std::filesystem::path& config_path, const std::optional<std::filesystem::path>& output,
              std::ostream& out, std::ostream& err) {
    return run_guarded(
        [&] {
            const RunConfig config = load_run_config(config_path);
            if (config.dataset.source != DatasetConfig::Source::Synthetic) {
                throw ConfigError("synth needs a synthetic dataset");
            }
            const SyntheticData syn = gen_synthetic(config.dataset.synthetic);
            const std::filesystem::path path = output.value_or(config.out_dir / kSynthFile);
            if (path.has_parent_path()) {
                std::filesystem::create_directories(path.parent_path());
            }
            write_csv(path, syn.dataset);
            fmt::print(out, "wrote {} rows to {}\n", syn.dataset.output_count(), path.string());
            return static_cast<int>(kExitOk);
        },
        err);
}

}  // namespace cgm::cli
