#pragma once

#include <algorithm>
#include <cstdio>
#include <array>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ted/checkpoint.hpp"
#include "ted/corpus.hpp"
#include "ted/errors.hpp"
#include "ted/io.hpp"
#include "ted/metrics.hpp"
#include "ted/search.hpp"
#include "ted/stopwords.hpp"
#include "ted/tokenizer.hpp"
#include "ted/trainer.hpp"

namespace ted {

using nlohmann::json;

struct PathsConfig {
    std::string corpus;
    std::string work_dir = "work";
    std::string finetune_articles;  // empty: accepted corpus
    std::string generate_articles;  // empty: accepted corpus
    std::string references;
    std::string checkpoint;         // empty: finetuned model
};

struct RunConfig {
    std::uint64_t seed = 1;
    PathsConfig paths;
    FilterConfig filter;
    std::size_t vocab_size = 8000;
    ModelConfig model;
    TrainConfig pretrain = TrainConfig::pretrain_defaults();
    double val_fraction = 0.1;
    TrainConfig finetune = TrainConfig::finetune_defaults();
    CorruptionSpec corruption;
    std::size_t beam_width = 4;
    std::size_t max_len = 60;

    template <class Self, class F>
    static void visit(Self& c, F&& f) {
        f("", "seed", c.seed);
        f("paths", "corpus", c.paths.corpus);
        f("paths", "work_dir", c.paths.work_dir);
        f("paths", "finetune_articles", c.paths.finetune_articles);
        f("paths", "generate_articles", c.paths.generate_articles);
        f("paths", "references", c.paths.references);
        f("paths", "checkpoint", c.paths.checkpoint);
        f("filter", "lead_min_words", c.filter.lead_min_words);
        f("filter", "lead_max_words", c.filter.lead_max_words);
        f("filter", "body_min_words", c.filter.body_min_words);
        f("filter", "body_max_words", c.filter.body_max_words);
        f("filter", "overlap_threshold", c.filter.overlap_threshold);
        f("filter", "lead_sentences", c.filter.lead_sentence_count);
        f("tokenizer", "vocab_size", c.vocab_size);
        f("model", "num_layers", c.model.num_layers);
        f("model", "num_heads", c.model.num_heads);
        f("model", "hidden_size", c.model.hidden_size);
        f("model", "ff_inner_size", c.model.ff_inner_size);
        f("model", "max_positions", c.model.max_positions);
        f("model", "positional_scale", c.model.positional_scale);
        visit_train(c.pretrain, "pretrain", f);
        f("pretrain", "val_fraction", c.val_fraction);
        f("pretrain", "val_max_len", c.pretrain.val_max_len);
        f("pretrain", "eval_every", c.pretrain.eval_every);
        visit_train(c.finetune, "finetune", f);
        f("finetune", "tau", c.finetune.tau);
        f("finetune", "max_gen_len", c.finetune.max_gen_len);
        f("finetune", "theme_window", c.finetune.theme_window);
        f("finetune", "denoise_len", c.finetune.denoise_len);
        f("corruption", "insertion_low", c.corruption.insertion_low);
        f("corruption", "insertion_high", c.corruption.insertion_high);
        f("corruption", "shuffle_fraction", c.corruption.shuffle_fraction);
        f("generate", "beam_width", c.beam_width);
        f("generate", "max_len", c.max_len);
    }

    template <class T, class F>
    static void visit_train(T& t, const char* section, F& f) {
        f(section, "lr", t.lr);
        f(section, "batch_size", t.batch_size);
        f(section, "epochs", t.epochs);
        f(section, "max_steps", t.max_steps);
        f(section, "dropout", t.dropout);
        f(section, "rectify", t.rectify);
        f(section, "clip_norm", t.clip_norm);
    }

    json to_json() const {
        json j = json::object();
        visit(*this, [&](const char* section, const char* key, const auto& v) {
            if (*section)
                j[section][key] = v;
            else
                j[key] = v;
        });
        return j;
    }

    // Applies the keys present in j; unknown keys and mistyped values are rejected.
    void merge(const json& j) {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        std::set<std::string> known;
        visit(*this, [&](const char* section, const char* key, auto& v) {
            const std::string path = *section ? std::string(section) + "." + key : std::string(key);
            known.insert(path);
            const json* node = &j;
            if (*section) {
                if (!j.contains(section)) return;
                node = &j.at(section);
                if (!node->is_object()) throw ConfigError("config section " + std::string(section) + " must be an object");
            }
            if (!node->contains(key)) return;
            assign(v, node->at(key), path);
        });
        for (const auto& [k, v] : j.items()) {
            if (v.is_object()) {
                for (const auto& [k2, v2] : v.items())
                    if (!known.count(k + "." + k2)) throw ConfigError("unknown config key " + k + "." + k2);
            } else if (!known.count(k)) {
                throw ConfigError("unknown config key " + k);
            }
        }
    }

    // Applies a dotted "section.key=value" override; value is parsed as JSON
    // when possible and taken as a string otherwise.
    void set(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: " + assignment);
        const std::string path = assignment.substr(0, eq);
        const std::string text = assignment.substr(eq + 1);
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        json patch;
        if (const auto dot = path.find('.'); dot != std::string::npos)
            patch[path.substr(0, dot)][path.substr(dot + 1)] = value;
        else
            patch[path] = value;
        merge(patch);
    }

    void validate() const {
        try {
            filter.validate();
            corruption.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        pretrain.validate();
        finetune.validate();
        if (vocab_size <= static_cast<std::size_t>(kNumSpecials) + 256)
            throw ConfigError("tokenizer.vocab_size must exceed " + std::to_string(kNumSpecials + 256));
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("pretrain.val_fraction must lie in (0, 1)");
        if (beam_width == 0) throw ConfigError("generate.beam_width must be at least 1");
        if (max_len == 0) throw ConfigError("generate.max_len must be at least 1");
        ModelConfig m = model;
        m.vocab_size = vocab_size;
        m.validate();
        if (paths.work_dir.empty()) throw ConfigError("paths.work_dir must not be empty");
    }

    TrainConfig pretrain_config() const {
        TrainConfig t = pretrain;
        t.seed = seed;
        return t;
    }

    TrainConfig finetune_config() const {
        TrainConfig t = finetune;
        t.seed = seed;
        return t;
    }

  private:
    template <class T>
    static void assign(T& out, const json& v, const std::string& path) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_unsigned()) throw ConfigError(path + " must be a non-negative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(path + " must be a number");
        } else {
            if (!v.is_string()) throw ConfigError(path + " must be a string");
        }
        out = v.get<T>();
    }
};

namespace app {

namespace fs = std::filesystem;

struct Layout {
    fs::path root;
    fs::path prep() const { return root / "prep"; }
    fs::path accepted() const { return prep() / "accepted.jsonl"; }
    fs::path rejected() const { return prep() / "rejected.jsonl"; }
    fs::path stats() const { return prep() / "stats.json"; }
    fs::path tokenizer_dir() const { return root / "tokenizer"; }
    fs::path tokenizer() const { return tokenizer_dir() / "tokenizer.model"; }
    fs::path pretrain() const { return root / "pretrain"; }
    fs::path pretrain_best() const { return pretrain() / "best.ckpt"; }
    fs::path pretrain_last() const { return pretrain() / "last.ckpt"; }
    fs::path finetune() const { return root / "finetune"; }
    fs::path finetune_model() const { return finetune() / "model.ckpt"; }
    fs::path generate() const { return root / "generate"; }
    fs::path summaries() const { return generate() / "summaries.jsonl"; }
    fs::path evaluate() const { return root / "evaluate"; }
};

inline void require_artifact(const fs::path& path, const std::string& what, const std::string& stage) {
    if (!fs::exists(path))
        throw ConfigError("missing " + what + " at " + path.string() + "; run `ted " + stage + "` first");
}

inline void require_input(const std::string& path, const std::string& key) {
    if (path.empty()) throw ConfigError(key + " is not set");
    if (!fs::exists(path)) throw DataError("input file " + path + " (" + key + ") does not exist");
}

inline void echo_config(const RunConfig& cfg, const fs::path& dir) {
    write_file_atomic((dir / "config.json").string(), cfg.to_json().dump(2) + "\n");
}

inline std::string to_jsonl(const std::vector<json>& records) {
    std::string out;
    for (const auto& r : records) out += r.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
    return out;
}

struct Article {
    std::string id;
    std::string text;
};

// Strict reader for article files consumed by training and generation stages.
// Records carrying a reference summary are refused so that references can only
// ever reach the evaluate stage.
inline std::vector<Article> read_articles(const std::string& path) {
    std::vector<Article> out;
    std::set<std::string> seen;
    for_each_line(path, [&](const std::string& line, std::size_t number) {
        const auto where = path + ":" + std::to_string(number) + ": ";
        json j = json::parse(line, nullptr, false);
        if (!j.is_object()) throw DataError(where + "not a JSON object");
        for (const char* forbidden : {"summary", "reference", "highlights"})
            if (j.contains(forbidden)) throw DataError(where + "article records must not carry a '" + forbidden + "' field");
        if (!j.contains("id") || !j["id"].is_string()) throw DataError(where + "missing string field 'id'");
        if (!j.contains("text") || !j["text"].is_string()) throw DataError(where + "missing string field 'text'");
        auto id = j["id"].get<std::string>();
        if (!seen.insert(id).second) throw DataError(where + "duplicate id " + id);
        out.push_back({std::move(id), j["text"].get<std::string>()});
    });
    return out;
}

struct AcceptedArticle {
    std::string id;
    std::string lead;
    std::string body;
};

inline std::vector<AcceptedArticle> read_accepted(const Layout& layout) {
    require_artifact(layout.accepted(), "accepted corpus", "prep");
    std::vector<AcceptedArticle> out;
    for_each_line(layout.accepted().string(), [&](const std::string& line, std::size_t number) {
        json j = json::parse(line, nullptr, false);
        if (!j.is_object() || !j.contains("id") || !j.contains("lead") || !j.contains("body"))
            throw DataError(layout.accepted().string() + ":" + std::to_string(number) + ": malformed accepted record");
        out.push_back({j["id"].get<std::string>(), j["lead"].get<std::string>(), j["body"].get<std::string>()});
    });
    return out;
}

inline std::vector<Article> accepted_as_articles(const Layout& layout) {
    std::vector<Article> out;
    for (auto& a : read_accepted(layout)) out.push_back({a.id, a.lead + " " + a.body});
    return out;
}

inline TokenizerModel load_tokenizer(const Layout& layout) {
    require_artifact(layout.tokenizer(), "tokenizer model", "train-tokenizer");
    return TokenizerModel::load(layout.tokenizer().string());
}

inline std::string tokenizer_fingerprint(const TokenizerModel& tok) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(detail::fnv1a64(tok.serialize())));
    return "fnv1a64:" + std::string(hex);
}

inline void require_tokenizer_match(const Checkpoint& ckpt, const TokenizerModel& tok) {
    if (ckpt.tokenizer != tokenizer_fingerprint(tok))
        throw ConfigError("checkpoint was trained with a different tokenizer (" + ckpt.tokenizer + ")");
}

inline ModelConfig model_config(const RunConfig& cfg, const TokenizerModel& tok) {
    ModelConfig m = cfg.model;
    m.vocab_size = tok.vocab_size();
    return m;
}

inline Detokenizer detokenizer(const TokenizerModel& tok) {
    return [&tok](std::span<const TokenId> ids) { return tok.decode(std::vector<TokenId>(ids.begin(), ids.end())); };
}

inline std::vector<Article> generation_articles(const RunConfig& cfg, const Layout& layout) {
    if (cfg.paths.generate_articles.empty()) return accepted_as_articles(layout);
    require_input(cfg.paths.generate_articles, "paths.generate_articles");
    return read_articles(cfg.paths.generate_articles);
}

// ==================== Stages ====================

inline int cmd_prep(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    require_input(cfg.paths.corpus, "paths.corpus");
    const Layout layout{cfg.paths.work_dir};
    const auto stopwords = english_stopwords();
    std::vector<json> accepted, rejected;
    std::map<std::string, std::size_t> counts;
    for (auto v : kAllVerdicts) counts[verdict_code(v)] = 0;
    std::array<std::size_t, 20> histogram{};
    std::size_t articles = 0, malformed = 0;
    std::set<std::string> seen;

    for_each_line(cfg.paths.corpus, [&](const std::string& line, std::size_t number) {
        auto report = [&](const std::string& msg) {
            ++malformed;
            err << cfg.paths.corpus << ":" << number << ": " << msg << "\n";
        };
        json j = json::parse(line, nullptr, false);
        if (!j.is_object()) return report("not a JSON object");
        if (!j.contains("id") || !j["id"].is_string()) return report("missing string field 'id'");
        if (!j.contains("text") || !j["text"].is_string()) return report("missing string field 'text'");
        const auto id = j["id"].get<std::string>();
        if (!seen.insert(id).second) return report("duplicate id " + id);
        ++articles;
        auto rec = filter_article(make_record(id, j["text"].get<std::string>(), cfg.filter.lead_sentence_count),
                                  cfg.filter, stopwords);
        ++counts[verdict_code(rec.verdict)];
        ++histogram[std::min<std::size_t>(19, static_cast<std::size_t>(std::floor(rec.overlap * 20.0)))];
        if (rec.verdict == Verdict::Accepted)
            accepted.push_back(
                {{"id", rec.id}, {"text", rec.raw}, {"lead", rec.lead}, {"body", rec.body}, {"overlap", rec.overlap}});
        else
            rejected.push_back({{"id", rec.id}, {"verdict", verdict_code(rec.verdict)}, {"overlap", rec.overlap}});
    });

    json stats = {{"articles", articles},
                  {"malformed", malformed},
                  {"verdicts", counts},
                  {"overlap_histogram", {{"bins", 20}, {"counts", histogram}}}};
    write_file_atomic(layout.accepted().string(), to_jsonl(accepted));
    write_file_atomic(layout.rejected().string(), to_jsonl(rejected));
    write_file_atomic(layout.stats().string(), stats.dump(2) + "\n");
    echo_config(cfg, layout.prep());

    out << "articles " << articles << "\n";
    for (const auto& [code, n] : counts) out << code << " " << n << "\n";
    if (malformed) {
        out << "malformed " << malformed << "\n";
        return 2;
    }
    return 0;
}

inline int cmd_train_tokenizer(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const Layout layout{cfg.paths.work_dir};
    const auto articles = accepted_as_articles(layout);
    if (articles.empty()) throw DataError("accepted corpus is empty; nothing to train a tokenizer on");
    std::vector<std::string> texts;
    for (const auto& a : articles) texts.push_back(a.text);
    const auto tok = TokenizerModel::train(texts, cfg.vocab_size);
    if (!tok.reached_target())
        err << "warning: corpus supports only " << tok.vocab_size() << " of " << cfg.vocab_size << " pieces\n";
    tok.save(layout.tokenizer().string());
    echo_config(cfg, layout.tokenizer_dir());
    out << "vocab_size " << tok.vocab_size() << "\n";
    return 0;
}

inline int cmd_pretrain(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const Layout layout{cfg.paths.work_dir};
    const auto accepted = read_accepted(layout);
    const auto tok = load_tokenizer(layout);
    if (accepted.empty()) throw DataError("accepted corpus is empty; nothing to pretrain on");

    std::vector<PretrainExample> examples;
    for (const auto& a : accepted) examples.push_back({tok.encode(a.body), tok.encode(a.lead)});
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(cfg.seed);
    split_rng.shuffle(order.begin(), order.end());
    std::size_t n_val = static_cast<std::size_t>(std::ceil(cfg.val_fraction * static_cast<double>(examples.size())));
    n_val = std::min(std::max<std::size_t>(n_val, 1), examples.size() - 1);
    std::vector<PretrainExample> train, val;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : train).push_back(examples[order[i]]);
    if (train.empty()) {
        err << "warning: a single accepted article serves as both training and validation data\n";
        train = examples;
        val = examples;
    }

    std::vector<json> log;
    auto sink = [&](const json& record) {
        log.push_back(record);
        if (record.contains("val_rougeL"))
            err << "pretrain epoch " << record["epoch"] << " step " << record["step"] << " val_rougeL "
                << record["val_rougeL"].get<double>() << "\n";
    };
    auto result = pretrain(model_config(cfg, tok), train, val, cfg.pretrain_config(), sink, detokenizer(tok));
    result.best.tokenizer = tokenizer_fingerprint(tok);
    result.last.tokenizer = tokenizer_fingerprint(tok);
    save_checkpoint(result.best, layout.pretrain_best().string());
    save_checkpoint(result.last, layout.pretrain_last().string());
    write_file_atomic((layout.pretrain() / "metrics.jsonl").string(), to_jsonl(log));
    echo_config(cfg, layout.pretrain());
    out << "steps " << result.steps << " best_step " << result.best.step << " best_val_rougeL "
        << *result.best.best_metric << "\n";
    return 0;
}

inline int cmd_finetune(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const Layout layout{cfg.paths.work_dir};
    std::vector<Article> articles;
    if (cfg.paths.finetune_articles.empty()) {
        articles = accepted_as_articles(layout);
    } else {
        require_input(cfg.paths.finetune_articles, "paths.finetune_articles");
        articles = read_articles(cfg.paths.finetune_articles);
    }
    const auto tok = load_tokenizer(layout);
    require_artifact(layout.pretrain_best(), "pretrained checkpoint", "pretrain");
    const auto pretrained = load_checkpoint(layout.pretrain_best().string());
    require_tokenizer_match(pretrained, tok);

    std::vector<std::vector<TokenId>> ids;
    for (const auto& a : articles) ids.push_back(tok.encode(clean_article(a.text)));
    std::vector<json> log;
    std::size_t printed = 0;
    auto sink = [&](const json& record) {
        log.push_back(record);
        if (++printed % 50 == 0) err << "finetune step " << record["step"] << " loss " << record["loss"].get<double>() << "\n";
    };
    auto result = finetune(ids, pretrained, cfg.finetune_config(), cfg.corruption, model_config(cfg, tok), sink);
    save_checkpoint(result.final, layout.finetune_model().string());
    write_file_atomic((layout.finetune() / "metrics.jsonl").string(), to_jsonl(log));
    echo_config(cfg, layout.finetune());
    out << "steps " << result.steps.size();
    if (!result.steps.empty()) out << " final_loss " << result.steps.back().loss;
    out << "\n";
    return 0;
}

inline int cmd_generate(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    const Layout layout{cfg.paths.work_dir};
    const auto articles = generation_articles(cfg, layout);
    const auto tok = load_tokenizer(layout);
    fs::path ckpt_path = cfg.paths.checkpoint;
    if (ckpt_path.empty()) {
        ckpt_path = layout.finetune_model();
        require_artifact(ckpt_path, "finetuned checkpoint", "finetune");
    } else {
        require_input(ckpt_path.string(), "paths.checkpoint");
    }
    const auto ckpt = load_checkpoint(ckpt_path.string());
    require_tokenizer_match(ckpt, tok);
    require_compatible(ckpt, model_config(cfg, tok));
    const auto model = restore_model(ckpt, 0.0);
    const std::size_t limit = model.config().max_positions;

    std::vector<json> records;
    for (const auto& a : articles) {
        auto ids = tok.encode(clean_article(a.text));
        if (ids.empty()) throw DataError("article " + a.id + " has no tokens");
        if (ids.size() > limit) ids.resize(limit);
        const auto summary = beam_decode(model, ids, cfg.beam_width, cfg.max_len);
        records.push_back({{"id", a.id}, {"summary", tok.decode(summary)}, {"tokens", summary}});
    }
    write_file_atomic(layout.summaries().string(), to_jsonl(records));
    echo_config(cfg, layout.generate());
    out << "summaries " << records.size() << " max_len " << decodable_length(model, cfg.max_len) << "\n";
    return 0;
}

inline json score_json(const RougeScore& s) {
    return {{"p", s.precision}, {"r", s.recall}, {"f1", s.f1}};
}

inline json example_json(const std::string& id, const ExampleScores& s) {
    json novel = json::object();
    for (std::size_t n = 0; n < 4; ++n)
        novel[std::to_string(n + 1)] = s.novel[n] ? json(*s.novel[n]) : json(nullptr);
    return {{"id", id},
            {"rouge1", score_json(s.rouge1)},
            {"rouge2", score_json(s.rouge2)},
            {"rougeL", score_json(s.rougeL)},
            {"novel", novel},
            {"empty_reference", s.rouge1.empty_reference}};
}

inline json corpus_json(const CorpusScores& c) {
    json novel = json::object();
    for (std::size_t n = 0; n < 4; ++n) novel[std::to_string(n + 1)] = c.novel[n];
    return {{"count", c.count}, {"rouge1_f1", c.rouge1_f1}, {"rouge2_f1", c.rouge2_f1}, {"rougeL_f1", c.rougeL_f1},
            {"novel", novel}};
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    const Layout layout{cfg.paths.work_dir};
    require_input(cfg.paths.references, "paths.references");
    require_artifact(layout.summaries(), "generated summaries", "generate");
    const auto articles = generation_articles(cfg, layout);

    std::map<std::string, std::string> references;
    for_each_line(cfg.paths.references, [&](const std::string& line, std::size_t number) {
        json j = json::parse(line, nullptr, false);
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("summary") ||
            !j["summary"].is_string())
            throw DataError(cfg.paths.references + ":" + std::to_string(number) + ": expected {id, summary}");
        references[j["id"].get<std::string>()] = j["summary"].get<std::string>();
    });
    std::map<std::string, std::string> sources;
    for (const auto& a : articles) sources[a.id] = clean_article(a.text);

    std::vector<json> rows;
    std::vector<ExampleScores> model_scores, lead_scores;
    std::vector<std::string> ids;
    for_each_line(layout.summaries().string(), [&](const std::string& line, std::size_t number) {
        json j = json::parse(line, nullptr, false);
        if (!j.is_object() || !j.contains("id") || !j.contains("summary"))
            throw DataError(layout.summaries().string() + ":" + std::to_string(number) + ": malformed summary record");
        const auto id = j["id"].get<std::string>();
        const auto ref = references.find(id);
        if (ref == references.end()) throw DataError("no reference summary for id " + id);
        const auto src = sources.find(id);
        if (src == sources.end()) throw DataError("no source article for id " + id);
        const auto s = score_example(j["summary"].get<std::string>(), ref->second, src->second);
        model_scores.push_back(s);
        lead_scores.push_back(score_example(lead_x(split_sentences(src->second), 3), ref->second, src->second));
        rows.push_back(example_json(id, s));
    });

    const auto model_corpus = aggregate(model_scores);
    const auto lead_corpus = aggregate(lead_scores);
    json summary = {{"model", corpus_json(model_corpus)}, {"lead3", corpus_json(lead_corpus)}};
    std::ostringstream histogram;
    histogram << "n\tmodel\tlead3\n";
    for (std::size_t n = 0; n < 4; ++n)
        histogram << n + 1 << "\t" << model_corpus.novel[n] << "\t" << lead_corpus.novel[n] << "\n";

    write_file_atomic((layout.evaluate() / "report.jsonl").string(), to_jsonl(rows));
    write_file_atomic((layout.evaluate() / "summary.json").string(), summary.dump(2) + "\n");
    write_file_atomic((layout.evaluate() / "novel_ngrams.tsv").string(), histogram.str());
    echo_config(cfg, layout.evaluate());
    out << "examples " << model_corpus.count << " R1 " << model_corpus.rouge1_f1 << " R2 " << model_corpus.rouge2_f1
        << " RL " << model_corpus.rougeL_f1 << "\n";
    out << "lead3 R1 " << lead_corpus.rouge1_f1 << " R2 " << lead_corpus.rouge2_f1 << " RL " << lead_corpus.rougeL_f1
        << "\n";
    return 0;
}

}  // namespace app

// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 invariant violation.
inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App cli{"Unsupervised abstractive summarization pipeline"};
    cli.require_subcommand(1);
    cli.fallthrough();
    std::string config_path, work_dir;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    cli.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    cli.add_option("-w,--work-dir", work_dir, "Directory holding all stage artifacts");
    cli.add_option("-s,--set", overrides, "Override a config value: section.key=value");
    cli.add_option("--seed", seed, "Random seed");

    std::string corpus, finetune_articles, generate_articles, references, checkpoint;
    std::optional<std::size_t> max_len, beam_width;
    auto* prep = cli.add_subcommand("prep", "Clean, split and filter a raw article corpus");
    prep->add_option("-i,--input", corpus, "Raw corpus (JSONL with id and text)");
    auto* tokenizer = cli.add_subcommand("train-tokenizer", "Learn a subword vocabulary on the accepted corpus");
    auto* pretrain_cmd = cli.add_subcommand("pretrain", "Pretrain on lead prediction");
    auto* finetune_cmd = cli.add_subcommand("finetune", "Unsupervised theme and denoising finetuning");
    finetune_cmd->add_option("-i,--input", finetune_articles, "Articles (JSONL with id and text)");
    auto* generate = cli.add_subcommand("generate", "Beam-search summaries for articles");
    generate->add_option("-i,--input", generate_articles, "Articles (JSONL with id and text)");
    generate->add_option("--checkpoint", checkpoint, "Model checkpoint");
    generate->add_option("--max-len", max_len, "Maximum summary length in tokens");
    generate->add_option("--beam-width", beam_width, "Beam width");
    auto* evaluate = cli.add_subcommand("evaluate", "Score generated summaries against references");
    evaluate->add_option("-r,--references", references, "Reference summaries (JSONL with id and summary)");
    evaluate->add_option("-i,--input", generate_articles, "Source articles (JSONL with id and text)");

    try {
        std::reverse(args.begin(), args.end());
        cli.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            json j = json::parse(read_file(config_path), nullptr, false);
            if (j.is_discarded()) throw ConfigError("config file " + config_path + " is not valid JSON");
            cfg.merge(j);
        }
        for (const auto& o : overrides) cfg.set(o);
        if (!work_dir.empty()) cfg.paths.work_dir = work_dir;
        if (seed) cfg.seed = *seed;
        if (!corpus.empty()) cfg.paths.corpus = corpus;
        if (!finetune_articles.empty()) cfg.paths.finetune_articles = finetune_articles;
        if (!generate_articles.empty()) cfg.paths.generate_articles = generate_articles;
        if (!references.empty()) cfg.paths.references = references;
        if (!checkpoint.empty()) cfg.paths.checkpoint = checkpoint;
        if (max_len) cfg.max_len = *max_len;
        if (beam_width) cfg.beam_width = *beam_width;
        cfg.validate();

        if (prep->parsed()) return app::cmd_prep(cfg, out, err);
        if (tokenizer->parsed()) return app::cmd_train_tokenizer(cfg, out, err);
        if (pretrain_cmd->parsed()) return app::cmd_pretrain(cfg, out, err);
        if (finetune_cmd->parsed()) return app::cmd_finetune(cfg, out, err);
        if (generate->parsed()) return app::cmd_generate(cfg, out, err);
        if (evaluate->parsed()) return app::cmd_evaluate(cfg, out, err);
        return 1;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const InvariantError& e) {
        err << "invariant violated: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 3;
    }
}

inline int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(std::move(args));
}

}  // namespace ted
