"""Built-in toy command set used by the demos and the end-to-end tests.

Eight commands over fourteen phones. Two pairs differ in a single phone whose
synthetic feature means are placed close together: ``ka ti`` / ``ka te``
(i vs e) and ``ba do`` / ``pa do`` (b vs p).
"""

from .lexicon import CommandSet, parse_commands, parse_lexicon
from .model import ModelConfig

LEXICON = """\
# word<TAB>phones
ba\tb a
do\td o
gu\tg u
ka\tk a
mi\tm i
no\tn o
pa\tp a
su\ts u
te\tt e
ti\tt i
"""

COMMANDS = """\
ka ti
ka te
ba do
pa do
gu no
mi su ka
te gu
no mi
"""

# (phone_a, phone_b, mean distance) for the confusability dial
CONFUSABLE = (("i", "e", 2.5), ("b", "p", 2.5))


def command_set(states_per_phone=3):
    return CommandSet.build(parse_commands(COMMANDS), parse_lexicon(LEXICON), states_per_phone)


def model_config(cs, input_dim=40):
    """A 6-block, 48-channel network; one middle pair of blocks is causal."""
    return ModelConfig(
        output_units=cs.output_units,
        num_blocks=6,
        kernel_size=3,
        channels=48,
        dilations=(1, 2, 4, 4, 2, 1),
        causal_blocks=(2, 3),
        input_dim=input_dim,
        dropout_rate=0.1,
    )
