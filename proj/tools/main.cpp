#include "romcex/pipeline.hpp"

int main(int argc, char** argv) { return romcex::cli::run_cli(argc, argv); }
