#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "krigscd/diffusion.hpp"

namespace krigscd {

inline constexpr std::uint32_t kDenoiserMagic = 0x44454E4F;

struct ExternalDenoiserConfig {
  std::string command;  // run through /bin/sh -c
  std::chrono::milliseconds timeout{30000};
};

// Denoiser served by a child process speaking the binary request/response protocol on stdin/stdout.
// Requests carry the parent-chain timestep of the schedule.
class ExternalDenoiser final : public Denoiser {
 public:
  explicit ExternalDenoiser(ExternalDenoiserConfig config);
  ~ExternalDenoiser() override;
  ExternalDenoiser(const ExternalDenoiser&) = delete;
  ExternalDenoiser& operator=(const ExternalDenoiser&) = delete;

  DenoiserOutput predict(const Grid& x_t, int t, const NoiseSchedule& schedule) override;

  const std::vector<std::chrono::microseconds>& latencies() const { return latencies_; }

 private:
  void write_all(const void* data, std::size_t size);
  void read_all(void* data, std::size_t size);
  void shutdown();

  ExternalDenoiserConfig config_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::vector<std::chrono::microseconds> latencies_;
};

// Little-endian request and response codecs.
std::vector<std::uint8_t> encode_denoiser_request(const Grid& x_t, std::uint32_t t);
DenoiserOutput decode_denoiser_response(const std::vector<std::uint8_t>& bytes, Eigen::Index rows, Eigen::Index cols);

}  // namespace krigscd
