#include "crimelab/app.hpp"

int main(int argc, char** argv) { return crimelab::app::run(argc, argv); }
