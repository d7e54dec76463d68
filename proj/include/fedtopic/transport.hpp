// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0
//
// Message delivery between server and clients: a bit-exact framed binary
// encoding, in-process ordered queues for the simulator, and TCP. Frames
// are u32 LE payload length, u8 message type, payload.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedtopic/fedcore.hpp"

namespace fedtopic {

enum class MsgType : std::uint8_t {
    register_client = 0x01,
    vocab_upload = 0x02,
    global_init = 0x03,
    gradient_upload = 0x04,
    global_update = 0x05,
    done = 0x06,
};

// Complete frame bytes for a message.
std::vector<std::uint8_t> encode_frame(const FedMessage& msg);

// Parses one complete frame; throws TransportError on truncation, unknown
// message type, length mismatch or invalid UTF-8.
FedMessage decode_frame(const std::uint8_t* data, std::size_t size);
inline FedMessage decode_frame(const std::vector<std::uint8_t>& frame) {
    return decode_frame(frame.data(), frame.size());
}

// Blocking duplex message channel. recv() returns nullopt on a clean close.
class MessageChannel {
public:
    virtual ~MessageChannel() = default;
    virtual void send(const FedMessage& msg) = 0;
    virtual std::optional<FedMessage> recv() = 0;
    virtual void close() = 0;
};

// A connected pair of in-process channels backed by unbounded FIFO queues.
std::pair<std::unique_ptr<MessageChannel>, std::unique_ptr<MessageChannel>> make_inproc_pair();

// "host:port" with a numeric port.
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint);

class TcpListener {
public:
    // port 0 binds an ephemeral port; bound_port() reports the actual one.
    TcpListener(const std::string& host, std::uint16_t port);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t bound_port() const { return port_; }
    std::unique_ptr<MessageChannel> accept();
    void close();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

std::unique_ptr<MessageChannel> tcp_connect(const std::string& host, std::uint16_t port);

// Pumps a connected server: one reader per connection feeding one ordered
// queue; the state machine itself runs strictly sequentially. Returns when
// training is done and the final broadcasts are written out.
void drive_server(ServerState& server,
                  std::vector<std::unique_ptr<MessageChannel>> connections);

// Runs a client to completion: registration, vocabulary upload, then the
// gradient loop until Done.
void drive_client(ClientState& client, MessageChannel& channel);

struct FedRunResult {
    ModelWeights server_weights;
    ModelConfig config;
    Vocabulary vocab;
    std::vector<ModelWeights> client_weights;
    std::vector<std::vector<double>> client_losses;
    std::vector<double> rel_changes;
};

// Full federated run with every party in this process. The inproc variant
// uses queue channels; the tcp variant runs over loopback sockets.
FedRunResult run_federated_inproc(const std::vector<BowCorpus>& corpora,
                                  const ModelConfig& cfg_template, const FedParams& params);
FedRunResult run_federated_tcp(const std::vector<BowCorpus>& corpora,
                               const ModelConfig& cfg_template, const FedParams& params,
                               const std::string& host = "127.0.0.1", std::uint16_t port = 0);

// Process-level entry points for genuinely distributed runs.
struct ServerRunResult {
    ModelWeights weights;
    ModelConfig config;
    Vocabulary vocab;
    std::vector<double> rel_changes;
};

ServerRunResult serve_tcp(const std::string& endpoint, std::uint32_t num_clients,
                          const ModelConfig& cfg_template, const FedParams& params);

struct ClientRunResult {
    ModelWeights weights;
    ModelConfig config;
    std::vector<double> losses;
};

ClientRunResult run_client_tcp(const std::string& endpoint, std::uint32_t client_id,
                               const BowCorpus& corpus, const FedParams& params);

} // namespace fedtopic
