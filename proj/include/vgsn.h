/* C interface to the glyph-synthesis library. All functions return a
 * vgsn_status; on failure vgsn_last_error() carries a one-line message for
 * the calling thread. Handles are opaque and freed with their _destroy
 * function. Pixel buffers are row-major grayscale with values in [0,1]. */
#ifndef VGSN_H
#define VGSN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vgsn_status {
    VGSN_OK = 0,
    VGSN_ERR_INVALID_ARGUMENT = 1,
    VGSN_ERR_CONFIG = 2,
    VGSN_ERR_IO = 3,
    VGSN_ERR_FORMAT = 4,
    VGSN_ERR_NUMERIC = 5,
    VGSN_ERR_INTERNAL = 6
} vgsn_status;

/* Stable lowercase category name, e.g. "config". */
const char* vgsn_status_name(vgsn_status status);

/* Message from the most recent failing call on this thread. */
const char* vgsn_last_error(void);

typedef struct vgsn_model vgsn_model;
typedef struct vgsn_corpus vgsn_corpus;

typedef struct vgsn_model_config {
    int image_size;           /* square input/output, pixels */
    int grid;                 /* partitions per side; ignored for the baseline */
    int encoder_depth;        /* 0 = derive from image size */
    int decoder_stages;       /* 0 = derive from image size and grid */
    int latent_dim;           /* 0 = default 64 */
    int partition_latent_dim; /* 0 = default 16 */
    int basis_dim;            /* 0 = default 512 */
    int baseline_vae;         /* nonzero = plain VAE without the grid layer */
} vgsn_model_config;

/* Reference 256x256 grid-4 configuration. */
void vgsn_model_config_init(vgsn_model_config* config);

typedef struct vgsn_train_config {
    const char* optimizer; /* "sgd", "adam" or "rmsprop" */
    double learning_rate;  /* <= 0 picks the optimizer default */
    int batch_size;        /* <= 0 picks 32 */
    int epochs;
    uint64_t seed;
    double kl_weight;      /* experimental; 0 disables */
} vgsn_train_config;

void vgsn_train_config_init(vgsn_train_config* config);

vgsn_status vgsn_model_create(const vgsn_model_config* config, uint64_t seed,
                              vgsn_model** out);
void vgsn_model_destroy(vgsn_model* model);
vgsn_status vgsn_model_save(vgsn_model* model, const char* path);
vgsn_status vgsn_model_load(const char* path, vgsn_model** out);
vgsn_status vgsn_model_get_config(const vgsn_model* model, vgsn_model_config* out);
size_t vgsn_model_param_count(const vgsn_model* model);

/* Corpus directories hold files named U+XXXX.pgm (binary PGM, maxval 255);
 * pairs are formed by codepoint intersection of the two fonts. */
vgsn_status vgsn_corpus_load(const char* dir_a, const char* dir_b, vgsn_corpus** out);
void vgsn_corpus_destroy(vgsn_corpus* corpus);
int vgsn_corpus_size(const vgsn_corpus* corpus);
int vgsn_corpus_image_size(const vgsn_corpus* corpus);
uint32_t vgsn_corpus_codepoint(const vgsn_corpus* corpus, int index);

/* Trains in place. loss_out and seconds_out, when non-NULL, receive one value
 * per epoch (mean batch loss, measured wall seconds). */
vgsn_status vgsn_train(vgsn_model* model, const vgsn_corpus* corpus,
                       const vgsn_train_config* config, double* loss_out,
                       double* seconds_out);

/* Runs one glyph through the model. input and output are image_size^2 floats;
 * stochastic=0 uses the deterministic latent (z = mu). */
vgsn_status vgsn_generate(vgsn_model* model, const float* input, float* output,
                          int stochastic, uint64_t seed);

/* Binary PGM I/O. vgsn_pgm_load allocates *pixels; free with vgsn_free. */
vgsn_status vgsn_pgm_load(const char* path, float** pixels, int* width, int* height);
vgsn_status vgsn_pgm_save(const char* path, const float* pixels, int width, int height);
void vgsn_free(void* ptr);

/* Central-difference check of the full training loss on a reduced
 * configuration; writes the max relative error over all parameters and, when
 * worst_param is non-NULL, the name of the parameter group holding it. */
vgsn_status vgsn_grad_check(int image_size, int grid, int stages, uint64_t seed,
                            double* max_rel_error, char* worst_param,
                            size_t worst_param_size);

#ifdef __cplusplus
}
#endif

#endif /* VGSN_H */
