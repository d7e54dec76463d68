// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0

#include "fedtopic/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedtopic/errors.hpp"

namespace fedtopic {

namespace {

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw ConfigError("cannot open file for reading: " + path);
    return in;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw ConfigError("cannot open file for writing: " + path);
    return out;
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& in, const std::string& path) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8)) {
        throw ParseError("truncated binary file: " + path);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_f64_le(std::ostream& out, const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        write_u64_le(out, std::bit_cast<std::uint64_t>(data[i]));
    }
}

void read_f64_le(std::istream& in, double* data, std::size_t n, const std::string& path) {
    for (std::size_t i = 0; i < n; ++i) {
        data[i] = std::bit_cast<double>(read_u64_le(in, path));
    }
}

double parse_real(const std::string& text, const std::string& what, long line) {
    try {
        std::size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError("invalid " + what + ": '" + text + "'", line);
    }
}

} // namespace

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    auto out = open_out(path);
    out.precision(17);
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        out << vocab.term(i) << '\t' << vocab.freq(i) << '\n';
    }
}

Vocabulary load_vocabulary(const std::string& path) {
    auto in = open_in(path);
    std::vector<std::pair<std::string, double>> pairs;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw ParseError("expected 'term<TAB>freq' in " + path, lineno);
        }
        std::string term = line.substr(0, tab);
        double freq = parse_real(line.substr(tab + 1), "frequency", lineno);
        if (freq < 0.0) throw ParseError("negative frequency in " + path, lineno);
        pairs.emplace_back(std::move(term), freq);
    }
    return Vocabulary::from_pairs(std::move(pairs));
}

void save_corpus(const BowCorpus& corpus, const std::string& path) {
    corpus.validate();
    {
        auto out = open_out(path);
        for (const auto& doc : corpus.docs) {
            bool first = true;
            for (const auto& [pos, cnt] : doc.entries) {
                for (std::uint32_t c = 0; c < cnt; ++c) {
                    if (!first) out << ' ';
                    out << corpus.vocab.term(pos);
                    first = false;
                }
            }
            out << '\n';
        }
    }
    save_vocabulary(corpus.vocab, path + ".vocab");
    if (corpus.embeddings) {
        save_doc_embeddings(*corpus.embeddings, path + ".emb");
    }
}

BowCorpus load_corpus(const std::string& path) {
    auto in = open_in(path);
    std::vector<std::vector<std::string>> docs;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream tokens(line);
        std::vector<std::string> doc;
        std::string tok;
        while (tokens >> tok) doc.push_back(std::move(tok));
        docs.push_back(std::move(doc));
    }

    Vocabulary vocab;
    std::string vocab_path = path + ".vocab";
    if (std::filesystem::exists(vocab_path)) {
        vocab = load_vocabulary(vocab_path);
    } else {
        vocab = build_vocabulary(docs, 1);
    }
    BowCorpus corpus = corpus_from_tokens(docs, std::move(vocab));

    std::string emb_path = path + ".emb";
    if (std::filesystem::exists(emb_path)) {
        corpus.embeddings = load_doc_embeddings(emb_path, corpus.num_docs());
    }
    corpus.validate();
    return corpus;
}

void save_doc_embeddings(const DocEmbeddings& emb, const std::string& path) {
    auto out = open_out(path);
    out.precision(17);
    out << "E " << emb.dim << '\n';
    for (std::size_t r = 0; r < emb.rows(); ++r) {
        const double* row = emb.row(r);
        for (std::size_t c = 0; c < emb.dim; ++c) {
            if (c) out << ' ';
            out << row[c];
        }
        out << '\n';
    }
}

DocEmbeddings load_doc_embeddings(const std::string& path, std::size_t expected_rows) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty embeddings file: " + path, 1);
    std::istringstream header(line);
    std::string tag;
    long dim = 0;
    if (!(header >> tag >> dim) || tag != "E" || dim <= 0) {
        throw ParseError("expected header 'E <positive int>' in " + path, 1);
    }

    DocEmbeddings emb;
    emb.dim = static_cast<std::size_t>(dim);
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream values(line);
        std::string field;
        std::size_t count = 0;
        while (values >> field) {
            emb.data.push_back(parse_real(field, "embedding value", lineno));
            ++count;
        }
        if (count != emb.dim) {
            throw ParseError("expected " + std::to_string(emb.dim) + " values, found " +
                                 std::to_string(count) + " in " + path,
                             lineno);
        }
    }
    if (emb.rows() != expected_rows) {
        throw ConfigError("embeddings file " + path + " has " + std::to_string(emb.rows()) +
                          " rows, corpus has " + std::to_string(expected_rows) + " documents");
    }
    return emb;
}

void save_matrix(const Matrix& m, const std::string& path) {
    if (m.data.size() != m.rows * m.cols) throw NumericError("matrix data/shape mismatch");
    auto out = open_out(path, std::ios::binary);
    write_u64_le(out, m.rows);
    write_u64_le(out, m.cols);
    write_f64_le(out, m.data.data(), m.data.size());
}

Matrix load_matrix(const std::string& path) {
    auto in = open_in(path, std::ios::binary);
    Matrix m;
    m.rows = static_cast<std::size_t>(read_u64_le(in, path));
    m.cols = static_cast<std::size_t>(read_u64_le(in, path));
    m.data.resize(m.rows * m.cols);
    read_f64_le(in, m.data.data(), m.data.size(), path);
    return m;
}

void append_scores_csv(const std::string& path, const std::vector<ScoreRow>& rows) {
    bool need_header = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    auto out = open_out(path, std::ios::app);
    out.precision(17);
    if (need_header) out << "scenario,metric,K_shared,eta,run,value\n";
    for (const auto& row : rows) {
        out << row.scenario << ',' << row.metric << ',';
        if (row.k_shared >= 0) out << row.k_shared;
        out << ',';
        if (row.eta >= 0.0) out << row.eta;
        out << ',' << row.run << ',' << row.value << '\n';
    }
}

} // namespace fedtopic
