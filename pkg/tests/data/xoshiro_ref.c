/* Reference SplitMix64 + xoshiro256** (public-domain algorithms by
   Sebastiano Vigna / David Blackman), used only to produce golden vectors. */
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>

static uint64_t sm_x;
static uint64_t splitmix64_next(void) {
    uint64_t z = (sm_x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

static inline uint64_t rotl(const uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

static uint64_t s[4];
static uint64_t next(void) {
    const uint64_t result = rotl(s[1] * 5, 7) * 9;
    const uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
}

int main(int argc, char **argv) {
    uint64_t seed = strtoull(argv[1], NULL, 10);
    int n = atoi(argv[2]);
    sm_x = seed;
    for (int i = 0; i < 4; i++) s[i] = splitmix64_next();
    for (int i = 0; i < n; i++) printf("%llu\n", (unsigned long long)next());
    return 0;
}
