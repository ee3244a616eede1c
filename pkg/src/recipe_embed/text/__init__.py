from recipe_embed.text.vocab import (
    BOS,
    EOR,
    EOS,
    PAD,
    SOR,
    SPECIALS,
    UNK,
    Vocabulary,
    tokenize,
)
from recipe_embed.text.extract import IngredientExtractor, extract_ingredient_name, rule_extract
from recipe_embed.text.word2vec import IngredientVectors, sgns_loss_and_grads, train_word_vectors
from recipe_embed.text.skip import (
    SkipInstructions,
    encode_instruction,
    encode_instructions,
    train_skip_instructions,
)
