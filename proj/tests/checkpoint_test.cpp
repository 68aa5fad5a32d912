#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "d2r/checkpoint.hpp"

using namespace d2r;

namespace {

ModelState sample_model() { return init_model({{2, 16, 8, 3}, Activation::relu, 42}, Role::target); }

CheckpointErrorKind decode_error(const std::vector<unsigned char>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return CheckpointErrorKind::io;
}

}  // namespace

TEST(Checkpoint, RoundTripPreservesForwardOutputsBitwise) {
  const ModelState m = sample_model();
  const auto path = std::filesystem::temp_directory_path() / "d2r_ckpt_roundtrip.ckpt";
  save_checkpoint(m, path);
  const ModelState back = load_checkpoint(path);
  EXPECT_EQ(back.spec.layer_widths, m.spec.layer_widths);
  EXPECT_EQ(back.spec.init_seed, m.spec.init_seed);
  EXPECT_EQ(back.role, Role::target);
  const Tensor x = Tensor::matrix({{0.1, 0.2}, {0.9, 0.33}, {0.5, 0.5}});
  EXPECT_EQ(predict_logits(back, x).values(), predict_logits(m, x).values());
  std::filesystem::remove(path);
}

TEST(Checkpoint, EncodingIsDeterministic) {
  EXPECT_EQ(encode_checkpoint(sample_model()), encode_checkpoint(sample_model()));
}

TEST(Checkpoint, CorruptedPayloadByteFailsChecksum) {
  auto bytes = encode_checkpoint(sample_model());
  bytes[bytes.size() / 2] ^= 0x10;
  EXPECT_EQ(decode_error(bytes), CheckpointErrorKind::checksum);
}

TEST(Checkpoint, Version255IsRejectedAsMismatch) {
  auto bytes = encode_checkpoint(sample_model());
  bytes[4] = 255;
  EXPECT_EQ(decode_error(bytes), CheckpointErrorKind::version_mismatch);
}

TEST(Checkpoint, BadMagicAndTruncation) {
  auto bytes = encode_checkpoint(sample_model());
  auto wrong = bytes;
  wrong[0] = 'X';
  EXPECT_EQ(decode_error(wrong), CheckpointErrorKind::bad_magic);
  bytes.resize(bytes.size() - 9);
  EXPECT_EQ(decode_error(bytes), CheckpointErrorKind::truncated);
  EXPECT_EQ(decode_error({}), CheckpointErrorKind::truncated);
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    load_checkpoint("/nonexistent/dir/model.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointErrorKind::io);
  }
}
