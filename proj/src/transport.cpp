// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0

#include "fedtopic/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "fedtopic/wire.hpp"

namespace fedtopic {

namespace {

constexpr std::size_t kMaxFrameBytes = 1ULL << 30;

void write_vocabulary(ByteWriter& w, const Vocabulary& vocab) {
    w.put_u64(vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        w.put_string(vocab.term(i));
        w.put_f64(vocab.freq(i));
    }
}

Vocabulary read_vocabulary(ByteReader& r) {
    std::uint64_t count = r.get_u64();
    std::vector<std::pair<std::string, double>> pairs;
    pairs.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string term = r.get_string();
        double freq = r.get_f64();
        pairs.emplace_back(std::move(term), freq);
    }
    return Vocabulary::from_pairs(std::move(pairs));
}

MsgType type_of(const FedMessage& msg) {
    switch (msg.index()) {
        case 0: return MsgType::register_client;
        case 1: return MsgType::vocab_upload;
        case 2: return MsgType::global_init;
        case 3: return MsgType::gradient_upload;
        case 4: return MsgType::global_update;
        default: return MsgType::done;
    }
}

std::vector<std::uint8_t> encode_payload(const FedMessage& msg) {
    ByteWriter w;
    std::visit(
        [&w](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, MsgRegister>) {
                w.put_u32(m.client_id);
            } else if constexpr (std::is_same_v<T, MsgVocabUpload>) {
                w.put_u32(m.client_id);
                write_vocabulary(w, m.vocab);
            } else if constexpr (std::is_same_v<T, MsgGlobalInit>) {
                write_vocabulary(w, m.vocab);
                wire_write_model_config(w, m.config);
                w.put_f64_array(m.weights);
            } else if constexpr (std::is_same_v<T, MsgGradientUpload>) {
                w.put_u32(m.client_id);
                w.put_u32(m.round);
                w.put_u32(m.n_samples);
                w.put_f64_array(m.gradient);
            } else if constexpr (std::is_same_v<T, MsgGlobalUpdate>) {
                w.put_u32(m.round);
                w.put_u8(m.continue_flag ? 1 : 0);
                w.put_f64_array(m.weights);
            } else {
                w.put_u32(m.round);
            }
        },
        msg);
    return w.take();
}

FedMessage decode_payload(MsgType type, ByteReader& r) {
    switch (type) {
        case MsgType::register_client: {
            MsgRegister m{r.get_u32()};
            return m;
        }
        case MsgType::vocab_upload: {
            MsgVocabUpload m;
            m.client_id = r.get_u32();
            m.vocab = read_vocabulary(r);
            return m;
        }
        case MsgType::global_init: {
            MsgGlobalInit m;
            m.vocab = read_vocabulary(r);
            m.config = wire_read_model_config(r);
            m.weights = r.get_f64_array();
            return m;
        }
        case MsgType::gradient_upload: {
            MsgGradientUpload m;
            m.client_id = r.get_u32();
            m.round = r.get_u32();
            m.n_samples = r.get_u32();
            m.gradient = r.get_f64_array();
            return m;
        }
        case MsgType::global_update: {
            MsgGlobalUpdate m;
            m.round = r.get_u32();
            std::uint8_t flag = r.get_u8();
            if (flag > 1) throw TransportError("invalid continue flag value");
            m.continue_flag = flag == 1;
            m.weights = r.get_f64_array();
            return m;
        }
        case MsgType::done: {
            MsgDone m{r.get_u32()};
            return m;
        }
    }
    throw TransportError("unknown msg_type");
}

} // namespace

std::vector<std::uint8_t> encode_frame(const FedMessage& msg) {
    std::vector<std::uint8_t> payload = encode_payload(msg);
    ByteWriter w;
    w.put_u32(static_cast<std::uint32_t>(payload.size()));
    w.put_u8(static_cast<std::uint8_t>(type_of(msg)));
    std::vector<std::uint8_t> frame = w.take();
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

FedMessage decode_frame(const std::uint8_t* data, std::size_t size) {
    if (size < 5) throw TransportError("truncated frame: missing header");
    ByteReader header(data, 5);
    std::uint32_t declared = header.get_u32();
    std::uint8_t raw_type = header.get_u8();
    if (size - 5 != declared) {
        throw TransportError("length mismatch: frame declares " + std::to_string(declared) +
                             " payload bytes, got " + std::to_string(size - 5));
    }
    if (raw_type < 0x01 || raw_type > 0x06) {
        throw TransportError("unknown msg_type 0x" + std::to_string(raw_type));
    }
    ByteReader payload(data + 5, declared);
    FedMessage msg = decode_payload(static_cast<MsgType>(raw_type), payload);
    payload.expect_end();
    return msg;
}

// ---------------------------------------------------------------------------
// In-process channels

namespace {

struct InprocQueue {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<FedMessage> items;
    bool closed = false;

    void push(const FedMessage& msg) {
        {
            std::lock_guard lock(mutex);
            if (closed) throw TransportError("send on a closed in-process channel");
            items.push_back(msg);
        }
        cv.notify_one();
    }

    std::optional<FedMessage> pop() {
        std::unique_lock lock(mutex);
        cv.wait(lock, [this] { return !items.empty() || closed; });
        if (items.empty()) return std::nullopt;
        FedMessage msg = std::move(items.front());
        items.pop_front();
        return msg;
    }

    void close() {
        {
            std::lock_guard lock(mutex);
            closed = true;
        }
        cv.notify_all();
    }
};

class InprocChannel final : public MessageChannel {
public:
    InprocChannel(std::shared_ptr<InprocQueue> in, std::shared_ptr<InprocQueue> out)
        : in_(std::move(in)), out_(std::move(out)) {}
    ~InprocChannel() override { close(); }

    void send(const FedMessage& msg) override { out_->push(msg); }
    std::optional<FedMessage> recv() override { return in_->pop(); }
    void close() override {
        out_->close();
        in_->close();
    }

private:
    std::shared_ptr<InprocQueue> in_;
    std::shared_ptr<InprocQueue> out_;
};

} // namespace

std::pair<std::unique_ptr<MessageChannel>, std::unique_ptr<MessageChannel>> make_inproc_pair() {
    auto a_to_b = std::make_shared<InprocQueue>();
    auto b_to_a = std::make_shared<InprocQueue>();
    return {std::make_unique<InprocChannel>(b_to_a, a_to_b),
            std::make_unique<InprocChannel>(a_to_b, b_to_a)};
}

// ---------------------------------------------------------------------------
// TCP

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint) {
    auto colon = endpoint.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == endpoint.size()) {
        throw ConfigError("endpoint must be host:port, got '" + endpoint + "'");
    }
    std::string host = endpoint.substr(0, colon);
    std::string port_text = endpoint.substr(colon + 1);
    long port = 0;
    try {
        std::size_t used = 0;
        port = std::stol(port_text, &used);
        if (used != port_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ConfigError("invalid port in endpoint '" + endpoint + "'");
    }
    if (port < 0 || port > 65535) throw ConfigError("port out of range in '" + endpoint + "'");
    return {host, static_cast<std::uint16_t>(port)};
}

namespace {

class TcpChannel final : public MessageChannel {
public:
    explicit TcpChannel(int fd) : fd_(fd) {
        int flag = 1;
        setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &flag, sizeof(flag));
    }
    ~TcpChannel() override { close(); }

    void send(const FedMessage& msg) override {
        std::vector<std::uint8_t> frame = encode_frame(msg);
        std::size_t sent = 0;
        std::lock_guard lock(write_mutex_);
        while (sent < frame.size()) {
            ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
            if (n <= 0) throw TransportError("connection lost while sending");
            sent += static_cast<std::size_t>(n);
        }
    }

    std::optional<FedMessage> recv() override {
        std::uint8_t header[5];
        std::size_t got = read_exact(header, 5, true);
        if (got == 0) return std::nullopt; // clean close at a frame boundary
        if (got < 5) throw TransportError("truncated frame: connection closed mid-header");
        std::uint32_t length = 0;
        for (int i = 0; i < 4; ++i) length |= static_cast<std::uint32_t>(header[i]) << (8 * i);
        if (length > kMaxFrameBytes) throw TransportError("frame too large");
        std::vector<std::uint8_t> frame(5 + static_cast<std::size_t>(length));
        std::memcpy(frame.data(), header, 5);
        if (length > 0) {
            std::size_t body = read_exact(frame.data() + 5, length, false);
            if (body < length) throw TransportError("truncated frame: connection closed mid-payload");
        }
        return decode_frame(frame);
    }

    void close() override {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    // Reads exactly n bytes; returns the count read (short only on EOF).
    std::size_t read_exact(std::uint8_t* buf, std::size_t n, bool eof_ok_at_start) {
        std::size_t got = 0;
        while (got < n) {
            ssize_t r = ::recv(fd_, buf + got, n - got, 0);
            if (r == 0) {
                if (got == 0 && eof_ok_at_start) return 0;
                return got;
            }
            if (r < 0) {
                if (errno == EINTR) continue;
                if (got == 0 && eof_ok_at_start) return 0; // closed by peer
                throw TransportError("connection error while receiving");
            }
            got += static_cast<std::size_t>(r);
        }
        return got;
    }

    int fd_;
    std::mutex write_mutex_;
};

int resolve_and_create(const std::string& host, std::uint16_t port, bool listen_socket) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (listen_socket) hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    std::string port_text = std::to_string(port);
    int rc = getaddrinfo(host.c_str(), port_text.c_str(), &hints, &res);
    if (rc != 0) {
        throw TransportError("cannot resolve '" + host + "': " + gai_strerror(rc));
    }
    int fd = -1;
    for (addrinfo* p = res; p != nullptr; p = p->ai_next) {
        fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
        if (fd < 0) continue;
        if (listen_socket) {
            int opt = 1;
            setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &opt, sizeof(opt));
            if (::bind(fd, p->ai_addr, p->ai_addrlen) == 0) break;
        } else {
            if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
        }
        ::close(fd);
        fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0) {
        throw TransportError(std::string(listen_socket ? "cannot bind " : "cannot connect to ") +
                             host + ":" + port_text);
    }
    return fd;
}

} // namespace

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
    fd_ = resolve_and_create(host, port, true);
    if (::listen(fd_, 64) != 0) {
        ::close(fd_);
        throw TransportError("listen failed on " + host + ":" + std::to_string(port));
    }
    sockaddr_storage addr{};
    socklen_t len = sizeof(addr);
    if (getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) == 0) {
        if (addr.ss_family == AF_INET) {
            port_ = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
        } else if (addr.ss_family == AF_INET6) {
            port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
        }
    }
}

TcpListener::~TcpListener() { close(); }

void TcpListener::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

std::unique_ptr<MessageChannel> TcpListener::accept() {
    int conn = ::accept(fd_, nullptr, nullptr);
    if (conn < 0) throw TransportError("accept failed");
    return std::make_unique<TcpChannel>(conn);
}

std::unique_ptr<MessageChannel> tcp_connect(const std::string& host, std::uint16_t port) {
    return std::make_unique<TcpChannel>(resolve_and_create(host, port, false));
}

// ---------------------------------------------------------------------------
// Drivers

void drive_server(ServerState& server, std::vector<std::unique_ptr<MessageChannel>> connections) {
    struct Incoming {
        std::size_t conn;
        std::optional<FedMessage> msg;
    };
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<Incoming> queue;

    std::vector<std::thread> readers;
    readers.reserve(connections.size());
    for (std::size_t i = 0; i < connections.size(); ++i) {
        readers.emplace_back([i, &connections, &mutex, &cv, &queue] {
            for (;;) {
                std::optional<FedMessage> msg;
                try {
                    msg = connections[i]->recv();
                } catch (const Error&) {
                    msg = std::nullopt;
                }
                bool eof = !msg.has_value();
                {
                    std::lock_guard lock(mutex);
                    queue.push_back({i, std::move(msg)});
                }
                cv.notify_one();
                if (eof) return;
            }
        });
    }

    auto shutdown = [&] {
        for (auto& conn : connections) conn->close();
        for (auto& t : readers) t.join();
    };

    std::vector<std::optional<std::size_t>> conn_of_client(server.num_clients());
    try {
        std::size_t open_count = connections.size();
        while (server.phase() != ServerState::Phase::done) {
            Incoming incoming = [&] {
                std::unique_lock lock(mutex);
                cv.wait(lock, [&] { return !queue.empty(); });
                Incoming item = std::move(queue.front());
                queue.pop_front();
                return item;
            }();
            if (!incoming.msg) {
                --open_count;
                throw TransportError("client connection lost before training finished");
            }
            if (const auto* reg = std::get_if<MsgRegister>(&*incoming.msg)) {
                if (reg->client_id < conn_of_client.size()) {
                    conn_of_client[reg->client_id] = incoming.conn;
                }
            }
            std::vector<Outbound> outbound = server.handle(*incoming.msg);
            for (const auto& out : outbound) {
                if (out.dest >= conn_of_client.size() || !conn_of_client[out.dest]) {
                    throw TransportError("no connection registered for client " +
                                         std::to_string(out.dest));
                }
                connections[*conn_of_client[out.dest]]->send(out.msg);
            }
        }
    } catch (...) {
        shutdown();
        throw;
    }
    shutdown();
}

void drive_client(ClientState& client, MessageChannel& channel) {
    for (const auto& msg : client.start()) channel.send(msg);
    while (!client.terminated()) {
        std::optional<FedMessage> msg = channel.recv();
        if (!msg) {
            throw TransportError("server connection lost before training finished");
        }
        for (const auto& reply : client.handle(*msg)) channel.send(reply);
    }
}

namespace {

FedRunResult run_federated_with_channels(
    const std::vector<BowCorpus>& corpora, const ModelConfig& cfg_template,
    const FedParams& params, std::vector<std::unique_ptr<MessageChannel>> server_side,
    std::vector<std::unique_ptr<MessageChannel>> client_side) {
    const std::size_t L = corpora.size();
    std::vector<ClientState> clients;
    clients.reserve(L);
    for (std::size_t l = 0; l < L; ++l) {
        clients.emplace_back(static_cast<std::uint32_t>(l), corpora[l], params);
    }
    ServerState server(static_cast<std::uint32_t>(L), cfg_template, params);

    std::vector<std::thread> client_threads;
    std::vector<std::exception_ptr> client_errors(L);
    for (std::size_t l = 0; l < L; ++l) {
        client_threads.emplace_back([l, &clients, &client_side, &client_errors] {
            try {
                drive_client(clients[l], *client_side[l]);
            } catch (...) {
                client_errors[l] = std::current_exception();
                client_side[l]->close();
            }
        });
    }

    std::exception_ptr server_error;
    try {
        drive_server(server, std::move(server_side));
    } catch (...) {
        server_error = std::current_exception();
        for (auto& ch : client_side) ch->close();
    }
    for (auto& t : client_threads) t.join();
    if (server_error) std::rethrow_exception(server_error);
    for (auto& err : client_errors) {
        if (err) std::rethrow_exception(err);
    }

    FedRunResult result;
    result.server_weights = server.weights();
    result.config = server.model_config();
    result.vocab = server.global_vocab();
    result.rel_changes = server.change_history();
    for (auto& c : clients) {
        result.client_weights.push_back(c.weights());
        result.client_losses.push_back(c.loss_history());
    }
    return result;
}

} // namespace

FedRunResult run_federated_inproc(const std::vector<BowCorpus>& corpora,
                                  const ModelConfig& cfg_template, const FedParams& params) {
    std::vector<std::unique_ptr<MessageChannel>> server_side, client_side;
    for (std::size_t l = 0; l < corpora.size(); ++l) {
        auto [a, b] = make_inproc_pair();
        server_side.push_back(std::move(a));
        client_side.push_back(std::move(b));
    }
    return run_federated_with_channels(corpora, cfg_template, params, std::move(server_side),
                                       std::move(client_side));
}

FedRunResult run_federated_tcp(const std::vector<BowCorpus>& corpora,
                               const ModelConfig& cfg_template, const FedParams& params,
                               const std::string& host, std::uint16_t port) {
    TcpListener listener(host, port);
    const std::uint16_t actual_port = listener.bound_port();
    std::vector<std::unique_ptr<MessageChannel>> client_side(corpora.size());
    std::thread connector([&] {
        for (std::size_t l = 0; l < corpora.size(); ++l) {
            client_side[l] = tcp_connect(host, actual_port);
        }
    });
    std::vector<std::unique_ptr<MessageChannel>> server_side;
    for (std::size_t l = 0; l < corpora.size(); ++l) {
        server_side.push_back(listener.accept());
    }
    connector.join();
    listener.close(); // exactly L connections are accepted
    return run_federated_with_channels(corpora, cfg_template, params, std::move(server_side),
                                       std::move(client_side));
}

ServerRunResult serve_tcp(const std::string& endpoint, std::uint32_t num_clients,
                          const ModelConfig& cfg_template, const FedParams& params) {
    auto [host, port] = parse_endpoint(endpoint);
    TcpListener listener(host, port);
    std::vector<std::unique_ptr<MessageChannel>> connections;
    for (std::uint32_t i = 0; i < num_clients; ++i) {
        connections.push_back(listener.accept());
    }
    listener.close();
    ServerState server(num_clients, cfg_template, params);
    drive_server(server, std::move(connections));
    return {server.weights(), server.model_config(), server.global_vocab(),
            server.change_history()};
}

ClientRunResult run_client_tcp(const std::string& endpoint, std::uint32_t client_id,
                               const BowCorpus& corpus, const FedParams& params) {
    auto [host, port] = parse_endpoint(endpoint);
    ClientState client(client_id, corpus, params);
    auto channel = tcp_connect(host, port);
    drive_client(client, *channel);
    return {client.weights(), client.model_config(), client.loss_history()};
}

} // namespace fedtopic
