#include <gtest/gtest.h>

#include <sstream>

#include "nfnoise/checkpoint.hpp"
#include "nfnoise/error.hpp"

using namespace nfnoise;

TEST(Checkpoint, RoundTripPreservesNamesShapesValues) {
  Rng rng(9);
  std::vector<NamedTensor> in{{"00.conv1x1.weight", Tensor::randn({3, 3}, rng)},
                              {"scalar", Tensor::scalar(2.5f)},
                              {"01.cac.head.bias", Tensor::randn({2, 1, 4}, rng)}};
  std::stringstream buffer;
  write_checkpoint(buffer, in);
  auto out = read_checkpoint(buffer);
  ASSERT_EQ(out.size(), in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_EQ(out[i].name, in[i].name);
    EXPECT_EQ(out[i].tensor.shape(), in[i].tensor.shape());
    for (std::size_t k = 0; k < in[i].tensor.numel(); ++k) {
      EXPECT_EQ(out[i].tensor.values()[k], in[i].tensor.values()[k]);
    }
  }
}

TEST(Checkpoint, ByteLayout) {
  std::stringstream buffer;
  write_checkpoint(buffer, {{"ab", Tensor({2}, {1.0f, -2.0f})}});
  const std::string bytes = buffer.str();
  // magic + version + count + (u16 + "ab") + u8 rank + u32 dim + 2 floats
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 2 + 2 + 1 + 4 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "NFCK");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2u);
  EXPECT_EQ(bytes.substr(14, 2), "ab");
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[17]), 2u);
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  std::stringstream bad("NOPE\x01\0\0\0");
  EXPECT_THROW(read_checkpoint(bad), DataError);
  std::stringstream buffer;
  write_checkpoint(buffer, {{"w", Tensor({4}, 1.0f)}});
  std::string bytes = buffer.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(cut), DataError);
}
