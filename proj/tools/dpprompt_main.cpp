#include "dpprompt/pipelines.hpp"

int main(int argc, char** argv) { return dpprompt::cli::cli_main(argc, argv); }
