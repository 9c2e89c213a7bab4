#include <gtest/gtest.h>

TEST(Placeholder, forward_metrics_test) { SUCCEED(); }
