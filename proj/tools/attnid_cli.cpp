// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnid/cli.hpp"

int main(int argc, char** argv) { return attnid::cli::run_cli(argc, argv); }
